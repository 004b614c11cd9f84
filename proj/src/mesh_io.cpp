#include "craniofit/mesh_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "craniofit/error.hpp"

namespace craniofit {

void write_obj(const mesh& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  if (!m.topology_id.empty()) out << "# topology " << m.topology_id << '\n';
  out << std::setprecision(17);
  for (const auto& v : m.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : m.triangles) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw_io("failed writing " + path);
}

mesh read_obj(const std::string& path, const std::string& topology_id) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open " + path);
  mesh        m;
  std::string line;
  int         line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string        tag;
    if (!(ls >> tag)) continue;
    const auto where = path + ":" + std::to_string(line_no);
    if (tag == "#") {
      std::string key, value;
      if (ls >> key >> value && key == "topology") m.topology_id = value;
    } else if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw_parse(where + ": malformed vertex");
      m.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      tri         f{};
      std::string token;
      int         count = 0;
      while (ls >> token) {
        if (count == 3) throw_parse(where + ": only triangular faces are supported");
        // "i", "i/t", "i//n", "i/t/n": the vertex index is the first field
        try {
          f[count++] = std::stoi(token.substr(0, token.find('/'))) - 1;
        } catch (const std::exception&) {
          throw_parse(where + ": malformed face index '" + token + "'");
        }
      }
      if (count != 3) throw_parse(where + ": face needs three indices");
      m.triangles.push_back(f);
    }
  }
  if (!topology_id.empty()) m.topology_id = topology_id;
  try {
    m.validate();
  } catch (const error& e) {
    throw_parse(path + ": " + e.what());
  }
  return m;
}

}  // namespace craniofit
