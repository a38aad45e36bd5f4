#include "simref/dataset_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "simref/tensor_io.hpp"

namespace simref {

namespace fs = std::filesystem;
using nlohmann::json;

static json world_config_json(const WorldConfig& c) {
  return {{"height", c.height},       {"width", c.width},
          {"noise_sigma", c.noise_sigma}, {"blur_radius", c.blur_radius},
          {"gain_lo", c.gain_lo},     {"gain_hi", c.gain_hi},
          {"bias_lo", c.bias_lo},     {"bias_hi", c.bias_hi},
          {"jitter_amp", c.jitter_amp}};
}

static WorldConfig world_config_from_json(const json& j) {
  WorldConfig c;
  c.height = j.at("height").get<uint32_t>();
  c.width = j.at("width").get<uint32_t>();
  c.noise_sigma = j.at("noise_sigma").get<float>();
  c.blur_radius = j.at("blur_radius").get<uint32_t>();
  c.gain_lo = j.at("gain_lo").get<float>();
  c.gain_hi = j.at("gain_hi").get<float>();
  c.bias_lo = j.at("bias_lo").get<float>();
  c.bias_hi = j.at("bias_hi").get<float>();
  c.jitter_amp = j.at("jitter_amp").get<float>();
  return c;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  if (ds.images.empty()) throw ConfigError("cannot save an empty dataset");
  fs::create_directories(dir);

  std::vector<Tensor> pixels;
  pixels.reserve(ds.images.size());
  for (const auto& img : ds.images) {
    if (img.role() != ds.role) throw ConfigError("dataset contains mixed roles");
    pixels.push_back(img.pixels());
  }
  save_tns(stack_images(pixels), dir / "images.tns");

  json m = {{"count", ds.images.size()},
            {"role", to_string(ds.role)},
            {"seed", ds.seed},
            {"config", world_config_json(ds.config)}};
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
  mf << m.dump(2) << "\n";

  if (ds.role != Role::real) {
    std::ofstream af(dir / "annotations.csv");
    if (!af) throw IoError("cannot write " + (dir / "annotations.csv").string());
    af << "index,pupil_cx,pupil_cy,gaze_x,gaze_y\n";
    char line[160];
    for (size_t i = 0; i < ds.images.size(); ++i) {
      const Annotation& a = ds.images[i].annotation();
      std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g\n", i,
                    static_cast<double>(a.pupil_cx), static_cast<double>(a.pupil_cy),
                    static_cast<double>(a.gaze[0]), static_cast<double>(a.gaze[1]));
      af << line;
    }
  }
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("no manifest.json in " + dir.string());
  json m;
  try {
    mf >> m;
  } catch (const json::exception& e) {
    throw IoError("corrupt dataset manifest in " + dir.string() + ": " + e.what());
  }

  Dataset ds;
  ds.role = role_from_string(m.at("role").get<std::string>());
  ds.seed = m.at("seed").get<uint64_t>();
  ds.config = world_config_from_json(m.at("config"));

  Tensor stack = load_tns(dir / "images.tns");
  if (stack.rank() != 4) throw IoError("dataset stack must be rank 4 in " + dir.string());
  size_t count = m.at("count").get<size_t>();
  if (stack.dim(0) != count) {
    throw IoError("dataset stack count mismatch in " + dir.string());
  }
  std::vector<Tensor> pixels = unstack_images(stack);

  if (ds.role == Role::real) {
    for (Tensor& p : pixels) ds.images.push_back(AnnotatedImage::real(std::move(p)));
    return ds;
  }

  std::ifstream af(dir / "annotations.csv");
  if (!af) throw IoError("no annotations.csv for annotated dataset in " + dir.string());
  std::string header;
  std::getline(af, header);
  if (header != "index,pupil_cx,pupil_cy,gaze_x,gaze_y") {
    throw IoError("unexpected annotations.csv header in " + dir.string());
  }
  for (size_t i = 0; i < pixels.size(); ++i) {
    std::string line;
    if (!std::getline(af, line)) throw IoError("annotations.csv truncated in " + dir.string());
    size_t idx;
    double cx, cy, gx, gy;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &idx, &cx, &cy, &gx, &gy) != 5 ||
        idx != i) {
      throw IoError("bad annotations.csv row " + std::to_string(i) + " in " + dir.string());
    }
    Annotation a{static_cast<float>(cx), static_cast<float>(cy),
                 {static_cast<float>(gx), static_cast<float>(gy)}};
    ds.images.emplace_back(std::move(pixels[i]), a, ds.role);
  }
  return ds;
}

}  // namespace simref
