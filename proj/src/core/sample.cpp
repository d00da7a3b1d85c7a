#include "mero/core/sample.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mero/error.hpp"

namespace mero::core {

PartGraph::PartGraph(int slots, int category_id)
    : p(slots),
      category(category_id),
      presence(static_cast<std::size_t>(slots), 0),
      boxes(static_cast<std::size_t>(slots)),
      adjacency(static_cast<std::size_t>(slots) * slots, 0) {}

void PartGraph::set_edge(int a, int b, bool on) {
  adjacency[static_cast<std::size_t>(a) * p + b] = on;
  adjacency[static_cast<std::size_t>(b) * p + a] = on;
}

std::vector<int> PartGraph::present_slots() const {
  std::vector<int> out;
  for (int s = 0; s < p; ++s)
    if (presence[s]) out.push_back(s);
  return out;
}

nn::Tensor PartGraph::features() const {
  nn::Tensor x({p, 5});
  for (int s = 0; s < p; ++s) {
    if (!presence[s]) continue;
    x.at(s, 0) = 1.0;
    x.at(s, 1) = boxes[s].x0;
    x.at(s, 2) = boxes[s].y0;
    x.at(s, 3) = boxes[s].x1;
    x.at(s, 4) = boxes[s].y1;
  }
  return x;
}

nn::Tensor PartGraph::adjacency_tensor() const {
  nn::Tensor a({p, p});
  for (std::size_t i = 0; i < adjacency.size(); ++i) a[i] = adjacency[i];
  return a;
}

void PartGraph::validate() const {
  MERO_CHECK(p > 0, "graph: no slots");
  MERO_CHECK(presence.size() == static_cast<std::size_t>(p) && boxes.size() == static_cast<std::size_t>(p) &&
                 adjacency.size() == static_cast<std::size_t>(p) * p,
             "graph: field sizes disagree with p");
  for (int s = 0; s < p; ++s) {
    const Box& b = boxes[s];
    const std::string where = "graph: slot " + std::to_string(s);
    MERO_CHECK(presence[s] <= 1, where + " presence is not binary");
    if (!presence[s]) {
      MERO_CHECK(b == Box{}, where + " is absent but has a non-zero box");
    } else {
      for (double v : {b.x0, b.y0, b.x1, b.y1})
        MERO_CHECK(std::isfinite(v) && v >= 0.0 && v <= 1.0, where + " box leaves the unit canvas");
      MERO_CHECK(b.width() >= 0.0 && b.height() >= 0.0, where + " box has negative extent");
    }
    MERO_CHECK(!edge(s, s), where + " has a self edge");
    for (int t = 0; t < p; ++t) {
      const auto v = adjacency[static_cast<std::size_t>(s) * p + t];
      MERO_CHECK(v <= 1, "graph: adjacency is not binary");
      MERO_CHECK(v == adjacency[static_cast<std::size_t>(t) * p + s], "graph: adjacency is not symmetric");
      if (v) MERO_CHECK(presence[s] && presence[t], "graph: edge touches an absent slot");
    }
  }
}

std::vector<std::uint8_t> restrict_adjacency(const std::vector<std::uint8_t>& tmpl,
                                             const std::vector<std::uint8_t>& presence) {
  const std::size_t p = presence.size();
  std::vector<std::uint8_t> a(tmpl);
  for (std::size_t s = 0; s < p; ++s)
    for (std::size_t t = 0; t < p; ++t)
      if (!presence[s] || !presence[t]) a[s * p + t] = 0;
  return a;
}

void ObjectSample::validate() const {
  graph.validate();
  MERO_CHECK(mask_resolution > 0, "sample " + id + ": mask resolution must be positive");
  MERO_CHECK(masks.size() == static_cast<std::size_t>(graph.p), "sample " + id + ": need one mask entry per slot");
  for (int s = 0; s < graph.p; ++s) {
    const Mask& m = masks[s];
    if (graph.presence[s]) {
      MERO_CHECK(m.size == mask_resolution, "sample " + id + ": slot " + std::to_string(s) + " mask missing or resized");
      for (auto v : m.bits) MERO_CHECK(v <= 1, "sample " + id + ": mask values must be 0/1");
    } else {
      MERO_CHECK(m.size == 0, "sample " + id + ": absent slot " + std::to_string(s) + " carries a mask");
    }
  }
  if (image) MERO_CHECK(image->channels == 3 && !image->empty(), "sample " + id + ": image must be RGB");
}

void ObjectSample::validate(const Schema& schema) const {
  validate();
  MERO_CHECK(graph.p == schema.p, "sample " + id + ": slot count differs from schema p");
  const auto& cat = schema.category(graph.category);
  for (int s : graph.present_slots())
    MERO_CHECK(cat.owns_slot(s), "sample " + id + ": category " + cat.name + " has no slot " + std::to_string(s));
  const auto expected = restrict_adjacency(schema.adjacency_template(graph.category), graph.presence);
  MERO_CHECK(expected == graph.adjacency, "sample " + id + ": adjacency differs from the category template");
}

namespace {

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

constexpr char kHex[] = "0123456789abcdef";

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 15]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(const std::string& text) {
  if (text.size() % 2) throw FormatError("sample: odd-length hex field");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw FormatError("sample: bad hex digit");
  };
  std::vector<std::uint8_t> out(text.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nib(text[2 * i]) << 4 | nib(text[2 * i + 1]));
  return out;
}

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80 >> (i % 8));
  return out;
}

std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& packed, std::size_t n) {
  if (packed.size() != (n + 7) / 8) throw FormatError("sample: mask payload has the wrong length");
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (packed[i / 8] >> (7 - i % 8)) & 1;
  return out;
}

// Reads "<key> <rest>" and insists on the key.
std::istringstream expect(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("sample: missing field " + key);
  const auto sp = line.find(' ');
  const std::string got = line.substr(0, sp);
  if (got != key) throw FormatError("sample: expected field " + key + ", found " + got);
  return std::istringstream(sp == std::string::npos ? "" : line.substr(sp + 1));
}

double parse_real(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw FormatError("sample: missing number");
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw FormatError("sample: bad number " + tok);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("sample: bad number " + tok);
  }
}

int parse_int(std::istream& in) {
  long v;
  if (!(in >> v)) throw FormatError("sample: missing integer");
  return static_cast<int>(v);
}

}  // namespace

std::string serialize_sample(const ObjectSample& s) {
  std::ostringstream out;
  const auto& g = s.graph;
  out << "mero-sample 1\n";
  out << "id " << s.id << "\n";
  out << "category " << g.category << "\n";
  out << "slots " << g.p << "\n";
  out << "mask_resolution " << s.mask_resolution << "\n";
  out << "presence";
  for (auto v : g.presence) out << ' ' << int(v);
  out << "\n";
  for (int slot : g.present_slots()) {
    const Box& b = g.boxes[slot];
    out << "box " << slot << ' ' << fmt_real(b.x0) << ' ' << fmt_real(b.y0) << ' ' << fmt_real(b.x1) << ' '
        << fmt_real(b.y1) << "\n";
  }
  out << "edges";
  for (int a = 0; a < g.p; ++a)
    for (int b = a + 1; b < g.p; ++b)
      if (g.edge(a, b)) out << ' ' << a << '-' << b;
  out << "\n";
  for (int slot : g.present_slots()) out << "mask " << slot << ' ' << to_hex(pack_bits(s.masks[slot].bits)) << "\n";
  if (s.image)
    out << "image " << s.image->width << ' ' << s.image->height << ' ' << to_hex(s.image->data) << "\n";
  else
    out << "image none\n";
  out << "end\n";
  return out.str();
}

ObjectSample deserialize_sample(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "mero-sample 1") throw FormatError("sample: bad or missing header");
  ObjectSample s;
  {
    auto f = expect(in, "id");
    std::getline(f, s.id);
  }
  int category = 0, p = 0;
  {
    auto f = expect(in, "category");
    category = parse_int(f);
  }
  {
    auto f = expect(in, "slots");
    p = parse_int(f);
  }
  if (p <= 0 || p > 254) throw FormatError("sample: slot count out of range");
  {
    auto f = expect(in, "mask_resolution");
    s.mask_resolution = parse_int(f);
  }
  if (s.mask_resolution <= 0 || s.mask_resolution > 4096) throw FormatError("sample: bad mask resolution");
  s.graph = PartGraph(p, category);
  {
    auto f = expect(in, "presence");
    for (int k = 0; k < p; ++k) {
      int v = parse_int(f);
      if (v != 0 && v != 1) throw FormatError("sample: presence must be 0/1");
      s.graph.presence[k] = static_cast<std::uint8_t>(v);
    }
  }
  const auto present = s.graph.present_slots();
  for (int slot : present) {
    auto f = expect(in, "box");
    if (parse_int(f) != slot) throw FormatError("sample: boxes out of slot order");
    Box& b = s.graph.boxes[slot];
    b.x0 = parse_real(f);
    b.y0 = parse_real(f);
    b.x1 = parse_real(f);
    b.y1 = parse_real(f);
  }
  {
    auto f = expect(in, "edges");
    std::string tok;
    while (f >> tok) {
      const auto dash = tok.find('-');
      if (dash == std::string::npos) throw FormatError("sample: bad edge " + tok);
      const int a = std::stoi(tok.substr(0, dash)), b = std::stoi(tok.substr(dash + 1));
      if (a < 0 || b < 0 || a >= p || b >= p) throw FormatError("sample: edge slot out of range");
      s.graph.set_edge(a, b, true);
    }
  }
  s.masks.assign(static_cast<std::size_t>(p), Mask{});
  const std::size_t cells = static_cast<std::size_t>(s.mask_resolution) * s.mask_resolution;
  for (int slot : present) {
    auto f = expect(in, "mask");
    if (parse_int(f) != slot) throw FormatError("sample: masks out of slot order");
    std::string hex;
    f >> hex;
    Mask m(s.mask_resolution);
    m.bits = unpack_bits(from_hex(hex), cells);
    s.masks[slot] = std::move(m);
  }
  {
    auto f = expect(in, "image");
    std::string first;
    f >> first;
    if (first != "none") {
      Raster img;
      img.width = std::stoi(first);
      img.height = parse_int(f);
      img.channels = 3;
      std::string hex;
      f >> hex;
      img.data = from_hex(hex);
      if (img.width <= 0 || img.height <= 0 ||
          img.data.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw FormatError("sample: image payload does not match its size");
      s.image = std::move(img);
    }
  }
  if (!std::getline(in, line) || line != "end") throw FormatError("sample: missing end marker");
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
  return s;
}

}  // namespace mero::core
