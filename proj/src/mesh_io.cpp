#include "lvreg/mesh_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "lvreg/error.hpp"

namespace lvreg {

namespace fs = std::filesystem;

namespace {

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  return in;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  return out;
}

int parse_obj_index(const std::string& token, std::size_t vertex_count, const std::string& where) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
  if (ec != std::errc() || ptr != head.data() + head.size() || idx == 0) {
    throw ValidationError(fmt::format("{}: bad face index '{}'", where, token));
  }
  // negative indices count back from the latest vertex
  return idx > 0 ? idx - 1 : static_cast<int>(vertex_count) + idx;
}

}  // namespace

TriangleMesh read_obj(const fs::path& path) {
  auto in = open_in(path);
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    const std::string where = fmt::format("{}:{}", path.string(), line_no);
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v[0] >> v[1] >> v[2])) throw ValidationError(where + ": malformed vertex");
      vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      for (std::string t; ls >> t;) tokens.push_back(t);
      if (tokens.size() != 3) throw ValidationError(where + ": only triangular faces are supported");
      Face f{};
      for (int c = 0; c < 3; ++c) f[c] = parse_obj_index(tokens[c], vertices.size(), where);
      faces.push_back(f);
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

void write_obj(const TriangleMesh& mesh, const fs::path& path) {
  std::string out;
  for (const Vec3& v : mesh.vertices()) out += fmt::format("v {:.17g} {:.17g} {:.17g}\n", v[0], v[1], v[2]);
  for (const Face& f : mesh.faces()) out += fmt::format("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
  auto file = open_out(path);
  file << out;
  if (!file) throw Error(fmt::format("failed writing '{}'", path.string()));
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw ValidationError(fmt::format("unknown PLY type '{}'", t));
}

double read_binary_scalar(std::istream& in, const std::string& t) {
  char b[8];
  const std::size_t n = ply_type_size(t);
  if (!in.read(b, static_cast<std::streamsize>(n))) throw ValidationError("truncated binary PLY");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + n);
  auto load = [&](auto v) {
    std::memcpy(&v, b, sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return load(std::int8_t{});
  if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
  if (t == "short" || t == "int16") return load(std::int16_t{});
  if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
  if (t == "int" || t == "int32") return load(std::int32_t{});
  if (t == "uint" || t == "uint32") return load(std::uint32_t{});
  if (t == "float" || t == "float32") return load(float{});
  return load(double{});
}

}  // namespace

TriangleMesh read_ply(const fs::path& path) {
  auto in = open_in(path, true);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw ValidationError(fmt::format("'{}' is not a PLY file", path.string()));
  }
  std::string format;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      ls >> format;
    } else if (key == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) throw ValidationError("PLY property before any element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian") {
    throw ValidationError(fmt::format("unsupported PLY format '{}'", format));
  }
  const bool binary = format == "binary_little_endian";

  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::istringstream ascii_body;
  if (!binary) {
    ascii_body.str(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
  }
  auto scalar = [&](const std::string& type) -> double {
    if (binary) return read_binary_scalar(in, type);
    double v;
    if (!(ascii_body >> v)) throw ValidationError(fmt::format("truncated PLY body in '{}'", path.string()));
    return v;
  };

  for (const auto& e : elements) {
    for (std::size_t r = 0; r < e.count; ++r) {
      Vec3 v = Vec3::Zero();
      std::vector<int> idx;
      for (const auto& p : e.properties) {
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(scalar(p.count_type));
          for (std::size_t i = 0; i < n; ++i) idx.push_back(static_cast<int>(scalar(p.type)));
          continue;
        }
        const double value = scalar(p.type);
        if (p.name == "x") v[0] = value;
        if (p.name == "y") v[1] = value;
        if (p.name == "z") v[2] = value;
      }
      if (e.name == "vertex") {
        vertices.push_back(v);
      } else if (e.name == "face") {
        if (idx.size() != 3) throw ValidationError("only triangular PLY faces are supported");
        faces.push_back({idx[0], idx[1], idx[2]});
      }
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

void write_ply(const TriangleMesh& mesh, const fs::path& path, PlyFormat format) {
  const bool binary = format == PlyFormat::binary_little_endian;
  std::string out = fmt::format(
      "ply\nformat {} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n"
      "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
      binary ? "binary_little_endian" : "ascii", mesh.vertex_count(), mesh.face_count());
  auto put = [&out](auto value) {
    char b[sizeof(value)];
    std::memcpy(b, &value, sizeof(value));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(value));
    out.append(b, sizeof(value));
  };
  for (const Vec3& v : mesh.vertices()) {
    if (binary) {
      put(v[0]), put(v[1]), put(v[2]);
    } else {
      out += fmt::format("{:.17g} {:.17g} {:.17g}\n", v[0], v[1], v[2]);
    }
  }
  for (const Face& f : mesh.faces()) {
    if (binary) {
      put(std::uint8_t{3});
      put(static_cast<std::int32_t>(f[0])), put(static_cast<std::int32_t>(f[1])), put(static_cast<std::int32_t>(f[2]));
    } else {
      out += fmt::format("3 {} {} {}\n", f[0], f[1], f[2]);
    }
  }
  auto file = open_out(path, true);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(fmt::format("failed writing '{}'", path.string()));
}

TriangleMesh read_mesh(const fs::path& path) {
  if (path.extension() == ".obj") return read_obj(path);
  if (path.extension() == ".ply") return read_ply(path);
  throw ValidationError(fmt::format("unknown mesh extension '{}'", path.extension().string()));
}

void write_mesh(const TriangleMesh& mesh, const fs::path& path) {
  if (path.extension() == ".obj") return write_obj(mesh, path);
  if (path.extension() == ".ply") return write_ply(mesh, path);
  throw ValidationError(fmt::format("unknown mesh extension '{}'", path.extension().string()));
}

void write_label_csv(std::span<const int> labels, const PartLabelSet& parts, const fs::path& path) {
  std::string out = "vertex_index,label_name\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out += fmt::format("{},{}\n", i, parts.name(labels[i]));
  auto file = open_out(path);
  file << out;
  if (!file) throw Error(fmt::format("failed writing '{}'", path.string()));
}

std::vector<int> read_label_csv(const fs::path& path, const PartLabelSet& parts, std::size_t vertex_count) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || (line != "vertex_index,label_name" && line != "vertex_index,label_name\r")) {
    throw ValidationError(fmt::format("'{}' lacks the header vertex_index,label_name", path.string()));
  }
  std::vector<int> labels(vertex_count, -1);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValidationError(fmt::format("{}:{}: expected two fields", path.string(), line_no));
    std::size_t idx = 0;
    const std::string head = line.substr(0, comma);
    const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
    if (ec != std::errc() || ptr != head.data() + head.size() || idx >= vertex_count) {
      throw ValidationError(fmt::format("{}:{}: bad vertex index '{}'", path.string(), line_no, head));
    }
    if (labels[idx] != -1) throw ValidationError(fmt::format("{}:{}: vertex {} listed twice", path.string(), line_no, idx));
    labels[idx] = parts.index_of(line.substr(comma + 1));
  }
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (labels[i] < 0) throw ValidationError(fmt::format("'{}' has no label for vertex {}", path.string(), i));
  }
  return labels;
}

}  // namespace lvreg
