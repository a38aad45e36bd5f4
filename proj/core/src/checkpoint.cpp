#include "simref/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "simref/tensor_io.hpp"

namespace simref {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string tensor_filename(const std::string& name) {
  std::string f = name;
  for (char& c : f) {
    if (c == '/' || c == '\\') c = '_';
  }
  return f + ".tns";
}

json params_manifest(const NetParams& p) {
  json tensors = json::array();
  for (const auto& [name, t] : p) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"file", tensor_filename(name)}});
  }
  return {{"kind", p.kind()}, {"tensors", tensors}};
}

void write_manifest(const json& m, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
  f << m.dump(2) << "\n";
}

json read_manifest(const fs::path& dir, const std::string& expected_kind) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("no manifest.json in " + dir.string());
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("kind", "") != expected_kind) {
    throw IoError("checkpoint in " + dir.string() + " has kind '" + m.value("kind", "") +
                  "', expected '" + expected_kind + "'");
  }
  return m;
}

void save_tensors(const NetParams& p, const fs::path& dir) {
  for (const auto& [name, t] : p) save_tns(t, dir / tensor_filename(name));
}

void load_tensors(const json& m, const fs::path& dir, NetParams& p) {
  for (const auto& e : m.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    Tensor t = load_tns(dir / e.at("file").get<std::string>());
    if (t.shape() != shape) {
      throw IoError("tensor '" + name + "' in " + dir.string() + " has shape " +
                    shape_str(t.shape()) + ", manifest says " + shape_str(shape));
    }
    p.add(name, std::move(t));
  }
}

}  // namespace

void save_refiner(const Refiner& r, const fs::path& dir) {
  json m = params_manifest(r.params);
  m["arch"] = {{"in_channels", r.arch.in_channels},
               {"stem_filters", r.arch.stem_filters},
               {"resblocks", r.arch.resblocks},
               {"kernel", r.arch.kernel}};
  write_manifest(m, dir);
  save_tensors(r.params, dir);
}

Refiner load_refiner(const fs::path& dir) {
  json m = read_manifest(dir, "refiner");
  Refiner r;
  const json& a = m.at("arch");
  r.arch.in_channels = a.at("in_channels").get<uint32_t>();
  r.arch.stem_filters = a.at("stem_filters").get<uint32_t>();
  r.arch.resblocks = a.at("resblocks").get<uint32_t>();
  r.arch.kernel = a.at("kernel").get<uint32_t>();
  r.arch.validate();
  load_tensors(m, dir, r.params);
  if (r.params.param_count() != r.arch.param_count()) {
    throw IoError("refiner checkpoint in " + dir.string() +
                  " does not match its declared architecture");
  }
  return r;
}

void save_discriminator(const Discriminator& d, const fs::path& dir) {
  json layers = json::array();
  for (const DiscLayer& l : d.arch.layers) {
    layers.push_back({{"kind", l.kind == DiscLayer::Kind::conv ? "conv" : "maxpool"},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"filters", l.filters},
                      {"pad", l.pad}});
  }
  json m = params_manifest(d.params);
  m["arch"] = {{"in_channels", d.arch.in_channels},
               {"global_pool", d.arch.global_pool},
               {"layers", layers}};
  write_manifest(m, dir);
  save_tensors(d.params, dir);
}

Discriminator load_discriminator(const fs::path& dir) {
  json m = read_manifest(dir, "discriminator");
  Discriminator d;
  const json& a = m.at("arch");
  d.arch.in_channels = a.at("in_channels").get<uint32_t>();
  d.arch.global_pool = a.at("global_pool").get<bool>();
  for (const auto& e : a.at("layers")) {
    DiscLayer l;
    l.kind = e.at("kind").get<std::string>() == "conv" ? DiscLayer::Kind::conv
                                                       : DiscLayer::Kind::maxpool;
    l.kernel = e.at("kernel").get<uint32_t>();
    l.stride = e.at("stride").get<uint32_t>();
    l.filters = e.at("filters").get<uint32_t>();
    l.pad = e.at("pad").get<uint32_t>();
    d.arch.layers.push_back(l);
  }
  d.arch.validate();
  load_tensors(m, dir, d.params);
  return d;
}

}  // namespace simref
