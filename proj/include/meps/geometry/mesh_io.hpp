#pragma once

#include <cctype>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "meps/error.hpp"
#include "meps/geometry/mesh.hpp"

namespace meps::geo {

namespace detail {

// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw IoError("cannot format value");
  return std::string(buf, end);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Whitespace tokenizer that drops '#' comments and tracks line numbers.
class Tokens {
 public:
  Tokens(std::string text, std::string file) : text_(std::move(text)), file_(std::move(file)) {}

  bool next(std::string_view& tok) {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= text_.size()) return false;
    const auto start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '#') ++pos_;
    tok = std::string_view(text_).substr(start, pos_ - start);
    return true;
  }

  std::string_view expect(const char* what) {
    std::string_view tok;
    if (!next(tok)) fail(std::string("unexpected end of file, expected ") + what);
    return tok;
  }

  // Rest of the current line (used for PLY header lines).
  std::string line_rest() {
    const auto start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    std::string out = text_.substr(start, pos_ - start);
    while (!out.empty() && (out.back() == '\r' || out.back() == ' ')) out.pop_back();
    return out;
  }

  double number() {
    const auto tok = expect("a number");
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) fail("bad number '" + std::string(tok) + "'");
    return v;
  }

  std::size_t count() {
    const auto tok = expect("an integer");
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) fail("bad integer '" + std::string(tok) + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(file_ + ":" + std::to_string(line_) + ": " + msg);
  }

 private:
  std::string text_;
  std::string file_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

// Polygons with more than three corners are fan-triangulated.
inline void push_polygon(Mesh& mesh, const std::vector<std::size_t>& poly) {
  for (std::size_t j = 1; j + 1 < poly.size(); ++j) mesh.faces.push_back({poly[0], poly[j], poly[j + 1]});
}

}  // namespace detail

inline Mesh read_off(const std::filesystem::path& path) {
  detail::Tokens tk(detail::read_text(path), path.string());
  const auto magic = tk.expect("OFF header");
  if (magic != "OFF") tk.fail("not an OFF file");
  const auto nv = tk.count(), nf = tk.count();
  tk.count();  // edge count, unused
  Mesh mesh;
  mesh.vertices.resize(nv);
  for (auto& v : mesh.vertices)
    for (auto& c : v) c = tk.number();
  std::vector<std::size_t> poly;
  for (std::size_t f = 0; f < nf; ++f) {
    const auto corners = tk.count();
    if (corners < 3) tk.fail("face with fewer than 3 corners");
    poly.resize(corners);
    for (auto& idx : poly) idx = tk.count();
    detail::push_polygon(mesh, poly);
  }
  mesh.validate();
  return mesh;
}

/// ASCII PLY with float/double x y z vertex properties (extra properties are
/// skipped) and an optional face element with a vertex index list.
inline Mesh read_ply(const std::filesystem::path& path) {
  detail::Tokens tk(detail::read_text(path), path.string());
  if (tk.expect("ply header") != "ply") tk.fail("not a PLY file");
  std::size_t nv = 0, nf = 0;
  std::vector<std::string> vprops;
  std::string current;
  bool have_face_list = false;
  std::size_t face_scalars_before = 0, face_scalars_after = 0;
  for (;;) {
    const auto key = tk.expect("header keyword");
    if (key == "end_header") break;
    if (key == "format") {
      const auto fmt = tk.expect("format");
      if (fmt != "ascii") tk.fail("only ASCII PLY is supported");
      tk.line_rest();
    } else if (key == "comment" || key == "obj_info") {
      tk.line_rest();
    } else if (key == "element") {
      current = std::string(tk.expect("element name"));
      const auto n = tk.count();
      if (current == "vertex") nv = n;
      else if (current == "face") nf = n;
      else if (n != 0) tk.fail("unsupported element '" + current + "'");
    } else if (key == "property") {
      const auto type = tk.expect("property type");
      if (type == "list") {
        tk.expect("list count type");
        tk.expect("list value type");
        const auto name = tk.expect("property name");
        if (current != "face" || (name != "vertex_indices" && name != "vertex_index")) {
          tk.fail("unsupported list property");
        }
        have_face_list = true;
      } else {
        const auto name = std::string(tk.expect("property name"));
        if (current == "vertex") vprops.push_back(name);
        else if (current == "face") (have_face_list ? face_scalars_after : face_scalars_before)++;
      }
    } else {
      tk.fail("unknown header keyword '" + std::string(key) + "'");
    }
  }
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t p = 0; p < vprops.size(); ++p) {
    if (vprops[p] == "x") ix = static_cast<int>(p);
    if (vprops[p] == "y") iy = static_cast<int>(p);
    if (vprops[p] == "z") iz = static_cast<int>(p);
  }
  if (ix < 0 || iy < 0 || iz < 0) tk.fail("vertex element lacks x, y or z");
  if (nf > 0 && !have_face_list) tk.fail("face element lacks a vertex index list");

  Mesh mesh;
  mesh.vertices.resize(nv);
  std::vector<double> row(vprops.size());
  for (auto& v : mesh.vertices) {
    for (auto& r : row) r = tk.number();
    v = {row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)], row[static_cast<std::size_t>(iz)]};
  }
  std::vector<std::size_t> poly;
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t s = 0; s < face_scalars_before; ++s) tk.number();
    const auto corners = tk.count();
    if (corners < 3) tk.fail("face with fewer than 3 corners");
    poly.resize(corners);
    for (auto& idx : poly) idx = tk.count();
    for (std::size_t s = 0; s < face_scalars_after; ++s) tk.number();
    detail::push_polygon(mesh, poly);
  }
  mesh.validate();
  return mesh;
}

/// `comment`, if non-empty, is written as a '#' line after the OFF keyword.
inline void write_off(const std::filesystem::path& path, const Mesh& mesh, const std::string& comment = {}) {
  std::string out = "OFF\n";
  if (!comment.empty()) out += "# " + comment + "\n";
  out += std::to_string(mesh.size()) + " " + std::to_string(mesh.faces.size()) + " 0\n";
  for (const auto& v : mesh.vertices) {
    out += detail::format_double(v[0]) + " " + detail::format_double(v[1]) + " " + detail::format_double(v[2]) + "\n";
  }
  for (const auto& f : mesh.faces) {
    out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  }
  detail::write_text(path, out);
}

inline void write_ply(const std::filesystem::path& path, const Mesh& mesh, const std::string& comment = {}) {
  std::string out = "ply\nformat ascii 1.0\n";
  if (!comment.empty()) out += "comment " + comment + "\n";
  out += "element vertex " + std::to_string(mesh.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\n";
  out += "element face " + std::to_string(mesh.faces.size()) + "\nproperty list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    out += detail::format_double(v[0]) + " " + detail::format_double(v[1]) + " " + detail::format_double(v[2]) + "\n";
  }
  for (const auto& f : mesh.faces) {
    out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  }
  detail::write_text(path, out);
}

/// Dispatches on the extension (.off or .ply, case-sensitive lower case).
inline Mesh read_mesh(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".off") return read_off(path);
  if (ext == ".ply") return read_ply(path);
  throw IoError("unsupported mesh format: " + path.string());
}

inline void write_mesh(const std::filesystem::path& path, const Mesh& mesh, const std::string& comment = {}) {
  const auto ext = path.extension().string();
  if (ext == ".off") return write_off(path, mesh, comment);
  if (ext == ".ply") return write_ply(path, mesh, comment);
  throw IoError("unsupported mesh format: " + path.string());
}

/// One integer per line; '#' starts a comment.
inline std::vector<std::size_t> read_labels(const std::filesystem::path& path) {
  detail::Tokens tk(detail::read_text(path), path.string());
  std::vector<std::size_t> labels;
  std::string_view tok;
  while (tk.next(tok)) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) tk.fail("bad label '" + std::string(tok) + "'");
    labels.push_back(v);
  }
  return labels;
}

inline void write_labels(const std::filesystem::path& path, const std::vector<std::size_t>& labels,
                         const std::string& comment = {}) {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  for (auto l : labels) out += std::to_string(l) + "\n";
  detail::write_text(path, out);
}

/// Mesh plus its label sidecar, which must have one entry per vertex.
inline Mesh read_labeled_mesh(const std::filesystem::path& mesh_path, const std::filesystem::path& label_path) {
  Mesh mesh = read_mesh(mesh_path);
  auto labels = read_labels(label_path);
  if (labels.size() != mesh.size()) {
    throw IoError(label_path.string() + ": " + std::to_string(labels.size()) + " labels for a " +
                  std::to_string(mesh.size()) + "-vertex mesh");
  }
  mesh.labels = std::move(labels);
  return mesh;
}

}  // namespace meps::geo
