#include "simref/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "simref/checkpoint.hpp"

namespace simref {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(HistoryMode m) {
  return m == HistoryMode::augment ? "augment" : "split";
}

HistoryMode history_mode_from_string(const std::string& s) {
  if (s == "augment") return HistoryMode::augment;
  if (s == "split") return HistoryMode::split;
  throw ConfigError("unknown history mode: " + s);
}

void TrainConfig::validate() const {
  if (T == 0 || k_g == 0 || k_d == 0) throw ConfigError("T, K_g and K_d must be positive");
  if (b < 2 || b % 2 != 0) throw ConfigError("minibatch size b must be even and >= 2");
  if (history_mode == HistoryMode::split && b % 4 != 0) {
    throw ConfigError("split history mode needs b divisible by 4");
  }
  if (lambda < 0.0f) throw ConfigError("lambda must be >= 0");
  if (lr_r <= 0.0f || lr_d <= 0.0f) throw ConfigError("learning rates must be positive");
  if (pretrain_r_steps == 0 || pretrain_d_steps == 0) {
    throw ConfigError("pretraining step counts must be positive");
  }
  if (use_history && buffer_capacity < b / 2) {
    throw ConfigError("buffer capacity must hold at least b/2 images");
  }
}

// ---------------------------------------------------------------------------
// config <-> json
// ---------------------------------------------------------------------------

static json config_json(const TrainConfig& c) {
  return {{"T", c.T},
          {"k_g", c.k_g},
          {"k_d", c.k_d},
          {"b", c.b},
          {"lr_r", c.lr_r},
          {"lr_d", c.lr_d},
          {"lambda", c.lambda},
          {"buffer_capacity", c.buffer_capacity},
          {"pretrain_r_steps", c.pretrain_r_steps},
          {"pretrain_d_steps", c.pretrain_d_steps},
          {"seed", c.seed},
          {"history_mode", to_string(c.history_mode)},
          {"psi", to_string(c.psi)},
          {"use_history", c.use_history},
          {"global_adv", c.global_adv},
          {"decay_at_step", c.decay_at_step},
          {"decay_lr_r", c.decay_lr_r},
          {"decay_lr_d", c.decay_lr_d},
          {"checkpoint_every", c.checkpoint_every}};
}

static TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.T = j.at("T").get<uint32_t>();
  c.k_g = j.at("k_g").get<uint32_t>();
  c.k_d = j.at("k_d").get<uint32_t>();
  c.b = j.at("b").get<uint32_t>();
  c.lr_r = j.at("lr_r").get<float>();
  c.lr_d = j.at("lr_d").get<float>();
  c.lambda = j.at("lambda").get<float>();
  c.buffer_capacity = j.at("buffer_capacity").get<uint32_t>();
  c.pretrain_r_steps = j.at("pretrain_r_steps").get<uint32_t>();
  c.pretrain_d_steps = j.at("pretrain_d_steps").get<uint32_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.history_mode = history_mode_from_string(j.at("history_mode").get<std::string>());
  c.psi = feature_transform_from_string(j.at("psi").get<std::string>());
  c.use_history = j.at("use_history").get<bool>();
  c.global_adv = j.at("global_adv").get<bool>();
  c.decay_at_step = j.at("decay_at_step").get<uint32_t>();
  c.decay_lr_r = j.at("decay_lr_r").get<float>();
  c.decay_lr_d = j.at("decay_lr_d").get<float>();
  c.checkpoint_every = j.at("checkpoint_every").get<uint32_t>();
  return c;
}

std::string train_config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// train log
// ---------------------------------------------------------------------------

const char* TrainLog::csv_header() {
  return "step,loss_R,loss_realism,loss_selfreg,loss_D,mean_pfake_refined,mean_pfake_real";
}

void TrainLog::write_csv(const fs::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << csv_header() << "\n";
  char line[256];
  for (const TrainLogRecord& r : records) {
    std::snprintf(line, sizeof(line), "%u,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step,
                  static_cast<double>(r.loss_r), static_cast<double>(r.loss_realism),
                  static_cast<double>(r.loss_selfreg), static_cast<double>(r.loss_d),
                  static_cast<double>(r.mean_pfake_refined),
                  static_cast<double>(r.mean_pfake_real));
    f << line;
  }
}

TrainLog TrainLog::read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != csv_header()) {
    throw IoError("unexpected training log header in " + path.string());
  }
  TrainLog log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    TrainLogRecord r;
    if (std::sscanf(line.c_str(), "%u,%f,%f,%f,%f,%f,%f", &r.step, &r.loss_r, &r.loss_realism,
                    &r.loss_selfreg, &r.loss_d, &r.mean_pfake_refined,
                    &r.mean_pfake_real) != 7) {
      throw IoError("bad training log row in " + path.string());
    }
    log.records.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// sampling helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<uint32_t> sample_with_replacement(Pcg32& rng, uint32_t count, size_t n) {
  if (n == 0) throw ConfigError("cannot sample from an empty image set");
  std::vector<uint32_t> idx(count);
  for (uint32_t& i : idx) i = rng.uniform_below(static_cast<uint32_t>(n));
  return idx;
}

Tensor gather_batch(std::span<const AnnotatedImage> set, std::span<const uint32_t> idx) {
  std::vector<Tensor> imgs;
  imgs.reserve(idx.size());
  for (uint32_t i : idx) imgs.push_back(set[i].pixels());
  return stack_images(imgs);
}

void check_finite_loss(double v, const char* what, uint32_t step) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + " became non-finite (" + std::to_string(v) +
                       ") at step " + std::to_string(step));
  }
}

/// Mean of the fake-probability channel over the first n_images of a map.
double mean_pfake_head(const Tensor& map, size_t n_images) {
  size_t hw = static_cast<size_t>(map.dim(2)) * map.dim(3);
  double acc = 0.0;
  for (size_t i = 0; i < n_images; ++i) {
    const float* p0 = map.data() + i * 2 * hw;
    for (size_t p = 0; p < hw; ++p) acc += p0[p];
  }
  return acc / static_cast<double>(n_images * hw);
}

float lr_at(uint32_t step, float base, uint32_t decay_at, float decayed) {
  if (decay_at > 0 && step > decay_at && decayed > 0.0f) return decayed;
  return base;
}

}  // namespace

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

TrainerState make_trainer(const TrainConfig& cfg, const RefinerArch& rarch, DiscArch darch) {
  cfg.validate();
  darch.global_pool = cfg.global_adv;
  TrainerState st{
      .config = cfg,
      .refiner = build_refiner(rarch, cfg.seed),
      .disc = build_discriminator(darch, cfg.seed),
      .buffer = ReplayBuffer(cfg.buffer_capacity, mix_seed(cfg.seed, 0x8eaf)),
      .sampler = Pcg32(mix_seed(cfg.seed, 0x5a3b)),
  };
  return st;
}

std::vector<float> pretrain_refiner(TrainerState& st, std::span<const AnnotatedImage> synthetic) {
  const TrainConfig& cfg = st.config;
  std::vector<float> losses;
  losses.reserve(cfg.pretrain_r_steps);
  for (uint32_t s = 0; s < cfg.pretrain_r_steps; ++s) {
    auto idx = sample_with_replacement(st.sampler, cfg.b, synthetic.size());
    Tensor x = gather_batch(synthetic, idx);
    Tape t;
    Value vx = t.input(std::move(x));
    Value vref = refine_fwd(t, st.refiner, vx);
    Value vloss = scale(loss_self_reg(vref, vx, cfg.psi), cfg.lambda);
    check_finite_loss(vloss.scalar(), "refiner pretraining loss", s);
    t.backward(vloss);
    sgd_step(st.refiner.params, cfg.lr_r);
    losses.push_back(static_cast<float>(vloss.scalar()));
  }
  st.pretrained_r = true;
  return losses;
}

std::vector<float> pretrain_discriminator(TrainerState& st,
                                          std::span<const AnnotatedImage> synthetic,
                                          std::span<const AnnotatedImage> real) {
  const TrainConfig& cfg = st.config;
  if (!st.pretrained_r) throw ConfigError("pretrain the refiner before the discriminator");
  std::vector<float> losses;
  losses.reserve(cfg.pretrain_d_steps);
  uint32_t half = cfg.b / 2;
  for (uint32_t s = 0; s < cfg.pretrain_d_steps; ++s) {
    auto idx_s = sample_with_replacement(st.sampler, half, synthetic.size());
    auto idx_r = sample_with_replacement(st.sampler, half, real.size());
    Tensor fakes = refine(st.refiner, gather_batch(synthetic, idx_s));
    Tensor reals = gather_batch(real, idx_r);
    Tape t;
    Value mf = discriminate_fwd(t, st.disc, t.input(std::move(fakes)));
    Value mr = discriminate_fwd(t, st.disc, t.input(std::move(reals)));
    Value vloss = loss_discriminator(mf, mr);
    check_finite_loss(vloss.scalar(), "discriminator pretraining loss", s);
    t.backward(vloss);
    sgd_step(st.disc.params, cfg.lr_d);
    losses.push_back(static_cast<float>(vloss.scalar()));
  }
  st.pretrained_d = true;
  return losses;
}

void seed_buffer(TrainerState& st, std::span<const AnnotatedImage> synthetic) {
  if (!st.pretrained_r) throw ConfigError("seed_buffer needs a pretrained refiner");
  auto idx = sample_with_replacement(st.sampler, st.config.b, synthetic.size());
  Tensor refined = refine(st.refiner, gather_batch(synthetic, idx));
  std::vector<Tensor> imgs = unstack_images(refined);
  st.buffer.seed_fill(imgs);
  st.buffer_seeded = true;
}

TrainLog train(TrainerState& st, std::span<const AnnotatedImage> synthetic,
               std::span<const AnnotatedImage> real, const fs::path* run_dir,
               TrainLog* existing_log) {
  const TrainConfig& cfg = st.config;
  cfg.validate();
  if (!st.pretrained_r || !st.pretrained_d) {
    throw ConfigError("train() requires both networks pretrained");
  }
  if (cfg.use_history && !st.buffer_seeded) {
    throw ConfigError("train() requires a seed-filled history buffer");
  }

  TrainLog log;
  if (existing_log) log = *existing_log;

  for (uint32_t step = st.step + 1; step <= cfg.T; ++step) {
    TrainLogRecord rec;
    rec.step = step;
    float lr_r = lr_at(step, cfg.lr_r, cfg.decay_at_step, cfg.decay_lr_r);
    float lr_d = lr_at(step, cfg.lr_d, cfg.decay_at_step, cfg.decay_lr_d);

    // refiner updates; discriminator frozen
    for (uint32_t k = 0; k < cfg.k_g; ++k) {
      auto idx = sample_with_replacement(st.sampler, cfg.b, synthetic.size());
      Tensor x = gather_batch(synthetic, idx);
      Tape t;
      Value vx = t.input(std::move(x));
      Value vref = refine_fwd(t, st.refiner, vx);
      Value vmap = discriminate_fwd(t, st.disc, vref, /*frozen=*/true);
      Value vrealism = loss_realism(vmap);
      Value vreg = loss_self_reg(vref, vx, cfg.psi);
      Value vloss = add(vrealism, scale(vreg, cfg.lambda));
      check_finite_loss(vloss.scalar(), "refiner loss", step);
      t.backward(vloss);
      sgd_step(st.refiner.params, lr_r);
      ++st.refiner_updates;
      rec.loss_r = static_cast<float>(vloss.scalar());
      rec.loss_realism = static_cast<float>(vrealism.scalar());
      rec.loss_selfreg = static_cast<float>(vreg.scalar());
    }

    // discriminator updates; refiner frozen (refined images enter as data)
    for (uint32_t k = 0; k < cfg.k_d; ++k) {
      uint32_t fresh_count = cfg.use_history ? cfg.b / 2 : cfg.b;
      auto idx_s = sample_with_replacement(st.sampler, fresh_count, synthetic.size());
      Tensor refined = refine(st.refiner, gather_batch(synthetic, idx_s));
      std::vector<Tensor> fresh = unstack_images(refined);

      std::vector<Tensor> fake_stream;
      std::vector<Tensor> real_stream;
      size_t current_in_stream = 0;
      if (cfg.use_history) {
        uint32_t cur = cfg.history_mode == HistoryMode::augment ? cfg.b / 2 : cfg.b / 4;
        uint32_t reals = cfg.history_mode == HistoryMode::augment ? cfg.b : cfg.b / 2;
        std::span<const Tensor> current(fresh.data(), cur);
        auto idx_r = sample_with_replacement(st.sampler, reals, real.size());
        std::vector<Tensor> rimgs;
        rimgs.reserve(reals);
        for (uint32_t i : idx_r) rimgs.push_back(real[i].pixels());
        DiscBatch batch = compose_disc_batch(st.buffer, current, rimgs);
        fake_stream = std::move(batch.fake);
        real_stream = std::move(batch.real);
        current_in_stream = cur;
      } else {
        fake_stream = fresh;
        auto idx_r = sample_with_replacement(st.sampler, cfg.b, real.size());
        real_stream.reserve(cfg.b);
        for (uint32_t i : idx_r) real_stream.push_back(real[i].pixels());
        current_in_stream = fresh.size();
      }

      Tape t;
      Value mf = discriminate_fwd(t, st.disc, t.input(stack_images(fake_stream)));
      Value mr = discriminate_fwd(t, st.disc, t.input(stack_images(real_stream)));
      Value vloss = loss_discriminator(mf, mr);
      check_finite_loss(vloss.scalar(), "discriminator loss", step);
      t.backward(vloss);
      sgd_step(st.disc.params, lr_d);
      ++st.disc_updates;

      rec.loss_d = static_cast<float>(vloss.scalar());
      rec.mean_pfake_refined =
          static_cast<float>(mean_pfake_head(mf.tensor(), current_in_stream));
      rec.mean_pfake_real =
          static_cast<float>(mean_pfake_head(mr.tensor(), real_stream.size()));

      // one buffer update per discriminator update
      if (cfg.use_history) st.buffer.replace_half(fresh);
    }

    st.step = step;
    log.records.push_back(rec);

    if (run_dir && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        step != cfg.T) {
      save_trainer_state(st, *run_dir / "ckpt");
      log.write_csv(*run_dir / "log.csv");
    }
  }

  if (run_dir) {
    save_trainer_state(st, *run_dir / "ckpt");
    log.write_csv(*run_dir / "log.csv");
  }
  return log;
}

TrainLog run_training(TrainerState& st, std::span<const AnnotatedImage> synthetic,
                      std::span<const AnnotatedImage> real, const fs::path* run_dir) {
  pretrain_refiner(st, synthetic);
  pretrain_discriminator(st, synthetic, real);
  if (st.config.use_history) seed_buffer(st, synthetic);
  return train(st, synthetic, real, run_dir);
}

// ---------------------------------------------------------------------------
// checkpoint / resume
// ---------------------------------------------------------------------------

static constexpr int kStateVersion = 1;

void save_trainer_state(const TrainerState& st, const fs::path& dir) {
  fs::create_directories(dir);
  save_refiner(st.refiner, dir / "refiner");
  save_discriminator(st.disc, dir / "discriminator");
  if (st.buffer_seeded) st.buffer.save_stack(dir / "buffer.tns");

  json j = {{"version", kStateVersion},
            {"step", st.step},
            {"refiner_updates", st.refiner_updates},
            {"disc_updates", st.disc_updates},
            {"pretrained_r", st.pretrained_r},
            {"pretrained_d", st.pretrained_d},
            {"buffer_seeded", st.buffer_seeded},
            {"sampler_state", st.sampler.state()},
            {"sampler_inc", st.sampler.inc()},
            {"buffer_rng_state", st.buffer.rng_state()},
            {"buffer_rng_inc", st.buffer.rng_inc()},
            {"config", config_json(st.config)}};
  std::ofstream f(dir / "state.json");
  if (!f) throw IoError("cannot write " + (dir / "state.json").string());
  f << j.dump(2) << "\n";
}

TrainerState load_trainer_state(const fs::path& dir, const TrainConfig& requested,
                                bool allow_config_change) {
  std::ifstream f(dir / "state.json");
  if (!f) throw IoError("no state.json in " + dir.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("corrupt state.json in " + dir.string() + ": " + e.what());
  }
  if (j.value("version", -1) != kStateVersion) {
    throw IoError("unsupported checkpoint version in " + dir.string());
  }

  TrainConfig stored = config_from_json(j.at("config"));
  if (!(stored == requested) && !allow_config_change) {
    throw ConfigError(
        "resume config differs from the checkpointed one; pass allow-config-change to proceed");
  }

  TrainerState st{
      .config = allow_config_change ? requested : stored,
      .refiner = load_refiner(dir / "refiner"),
      .disc = load_discriminator(dir / "discriminator"),
      .buffer = ReplayBuffer(stored.buffer_capacity, 0),
      .sampler = Pcg32::restore(j.at("sampler_state").get<uint64_t>(),
                                j.at("sampler_inc").get<uint64_t>()),
  };
  st.step = j.at("step").get<uint32_t>();
  st.refiner_updates = j.at("refiner_updates").get<uint64_t>();
  st.disc_updates = j.at("disc_updates").get<uint64_t>();
  st.pretrained_r = j.at("pretrained_r").get<bool>();
  st.pretrained_d = j.at("pretrained_d").get<bool>();
  st.buffer_seeded = j.at("buffer_seeded").get<bool>();

  if (st.buffer_seeded) {
    if (!fs::exists(dir / "buffer.tns")) {
      throw IoError("checkpoint in " + dir.string() + " is missing its replay buffer stack");
    }
    st.buffer.load_stack(dir / "buffer.tns");
  }
  st.buffer.restore_rng(j.at("buffer_rng_state").get<uint64_t>(),
                        j.at("buffer_rng_inc").get<uint64_t>());
  return st;
}

}  // namespace simref
