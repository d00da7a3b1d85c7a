#include "mero/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "mero/error.hpp"

namespace mero::nn {
namespace {

constexpr const char* kMagic = "MEROCKPT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     Module& module) {
  nlohmann::json header;
  header["kind"] = kind;
  header["config"] = config;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  auto params = module.named_parameters();
  for (const auto& [name, p] : params) {
    header["tensors"].push_back({{"name", name}, {"shape", p.shape()}, {"offset", offset}});
    offset += p.value().size();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
    out << kMagic << "\n" << text.size() << "\n" << text;
    for (const auto& [name, p] : params)
      out.write(reinterpret_cast<const char*>(p.value().data()),
                static_cast<std::streamsize>(p.value().size() * sizeof(double)));
    if (!out) throw FormatError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  std::string magic, len_line;
  std::getline(in, magic);
  std::getline(in, len_line);
  if (magic != kMagic) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad header length");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path.string() + ": truncated header");

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  const std::streampos payload = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    Tensor t(shape);
    in.seekg(payload + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw FormatError(path.string() + ": truncated tensor " + name);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

void Checkpoint::apply_to(Module& module) const {
  std::set<std::string> seen;
  module.visit_parameters("", [&](const std::string& name, Var& p) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint (" + kind + ") lacks parameter " + name);
    if (it->second.shape() != p.shape())
      throw FormatError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(p.shape()));
    p.mutable_value() = it->second;
    seen.insert(name);
  });
  for (const auto& [name, t] : tensors)
    if (!seen.count(name)) throw FormatError("checkpoint (" + kind + ") has unknown parameter " + name);
}

}  // namespace mero::nn
