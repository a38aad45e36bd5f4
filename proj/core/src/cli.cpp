#include "simref/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "simref/checkpoint.hpp"
#include "simref/dataset_io.hpp"
#include "simref/grad_check.hpp"
#include "simref/harness.hpp"
#include "simref/tensor_io.hpp"
#include "simref/trainer.hpp"

namespace simref {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct AppConfig {
  TrainConfig train;
  WorldConfig world;
  std::string refiner_preset = "desk";  // desk | paper_gaze | paper_hand
  std::string disc_preset = "desk";
  uint32_t n_synthetic = 2000;
  uint32_t n_real = 2000;
  uint32_t n_real_test = 500;
  uint32_t n_drift = 100;
  uint64_t synth_seed = 11;
  uint64_t real_seed = 22;
  uint64_t real_test_seed = 33;
  uint64_t drift_seed = 44;
  uint32_t predictor_epochs = 20;
  float predictor_lr = 0.002f;
  uint32_t predictor_batch = 32;
  uint32_t predictor_train_n = 1000;
};

RefinerArch refiner_arch_from_preset(const std::string& p) {
  if (p == "desk") return RefinerArch::desk();
  if (p == "paper_gaze") return RefinerArch::paper_gaze();
  if (p == "paper_hand") return RefinerArch::paper_hand();
  throw ConfigError("unknown refiner preset: " + p);
}

DiscArch disc_arch_from_preset(const std::string& p) {
  if (p == "desk") return DiscArch::desk();
  if (p == "paper_gaze") return DiscArch::paper_gaze();
  if (p == "paper_hand") return DiscArch::paper_hand();
  throw ConfigError("unknown discriminator preset: " + p);
}

json app_config_json(const AppConfig& c) {
  json j = json::parse(train_config_to_json(c.train));
  j["height"] = c.world.height;
  j["width"] = c.world.width;
  j["noise_sigma"] = c.world.noise_sigma;
  j["blur_radius"] = c.world.blur_radius;
  j["gain_lo"] = c.world.gain_lo;
  j["gain_hi"] = c.world.gain_hi;
  j["bias_lo"] = c.world.bias_lo;
  j["bias_hi"] = c.world.bias_hi;
  j["jitter_amp"] = c.world.jitter_amp;
  j["refiner_preset"] = c.refiner_preset;
  j["disc_preset"] = c.disc_preset;
  j["n_synthetic"] = c.n_synthetic;
  j["n_real"] = c.n_real;
  j["n_real_test"] = c.n_real_test;
  j["n_drift"] = c.n_drift;
  j["synth_seed"] = c.synth_seed;
  j["real_seed"] = c.real_seed;
  j["real_test_seed"] = c.real_test_seed;
  j["drift_seed"] = c.drift_seed;
  j["predictor_epochs"] = c.predictor_epochs;
  j["predictor_lr"] = c.predictor_lr;
  j["predictor_batch"] = c.predictor_batch;
  j["predictor_train_n"] = c.predictor_train_n;
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

AppConfig app_config_from_json(const json& j) {
  AppConfig c;
  maybe(j, "T", c.train.T);
  maybe(j, "k_g", c.train.k_g);
  maybe(j, "k_d", c.train.k_d);
  maybe(j, "b", c.train.b);
  maybe(j, "lr_r", c.train.lr_r);
  maybe(j, "lr_d", c.train.lr_d);
  maybe(j, "lambda", c.train.lambda);
  maybe(j, "buffer_capacity", c.train.buffer_capacity);
  maybe(j, "pretrain_r_steps", c.train.pretrain_r_steps);
  maybe(j, "pretrain_d_steps", c.train.pretrain_d_steps);
  maybe(j, "seed", c.train.seed);
  if (j.contains("history_mode")) {
    c.train.history_mode = history_mode_from_string(j.at("history_mode").get<std::string>());
  }
  if (j.contains("psi")) {
    c.train.psi = feature_transform_from_string(j.at("psi").get<std::string>());
  }
  maybe(j, "use_history", c.train.use_history);
  maybe(j, "global_adv", c.train.global_adv);
  maybe(j, "decay_at_step", c.train.decay_at_step);
  maybe(j, "decay_lr_r", c.train.decay_lr_r);
  maybe(j, "decay_lr_d", c.train.decay_lr_d);
  maybe(j, "checkpoint_every", c.train.checkpoint_every);
  maybe(j, "height", c.world.height);
  maybe(j, "width", c.world.width);
  maybe(j, "noise_sigma", c.world.noise_sigma);
  maybe(j, "blur_radius", c.world.blur_radius);
  maybe(j, "gain_lo", c.world.gain_lo);
  maybe(j, "gain_hi", c.world.gain_hi);
  maybe(j, "bias_lo", c.world.bias_lo);
  maybe(j, "bias_hi", c.world.bias_hi);
  maybe(j, "jitter_amp", c.world.jitter_amp);
  maybe(j, "refiner_preset", c.refiner_preset);
  maybe(j, "disc_preset", c.disc_preset);
  maybe(j, "n_synthetic", c.n_synthetic);
  maybe(j, "n_real", c.n_real);
  maybe(j, "n_real_test", c.n_real_test);
  maybe(j, "n_drift", c.n_drift);
  maybe(j, "synth_seed", c.synth_seed);
  maybe(j, "real_seed", c.real_seed);
  maybe(j, "real_test_seed", c.real_test_seed);
  maybe(j, "drift_seed", c.drift_seed);
  maybe(j, "predictor_epochs", c.predictor_epochs);
  maybe(j, "predictor_lr", c.predictor_lr);
  maybe(j, "predictor_batch", c.predictor_batch);
  maybe(j, "predictor_train_n", c.predictor_train_n);
  return c;
}

AppConfig load_app_config(const std::vector<std::string>& args) {
  for (size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      std::ifstream f(args[i + 1]);
      if (!f) throw ConfigError("cannot read config file " + args[i + 1]);
      try {
        json j;
        f >> j;
        return app_config_from_json(j);
      } catch (const json::exception& e) {
        throw ConfigError("bad config json in " + args[i + 1] + ": " + e.what());
      }
    }
  }
  return AppConfig{};
}

// registers the shared training/world knobs; flags override config-file values
void add_common_options(CLI::App* cmd, AppConfig& c) {
  cmd->add_option("--config", "flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--T", c.train.T, "outer training steps");
  cmd->add_option("--k-g", c.train.k_g, "refiner updates per step");
  cmd->add_option("--k-d", c.train.k_d, "discriminator updates per step");
  cmd->add_option("--b", c.train.b, "minibatch size (even)");
  cmd->add_option("--lr-r", c.train.lr_r, "refiner learning rate");
  cmd->add_option("--lr-d", c.train.lr_d, "discriminator learning rate");
  cmd->add_option("--lambda", c.train.lambda, "self-regularization weight");
  cmd->add_option("--buffer-capacity", c.train.buffer_capacity, "history buffer size B");
  cmd->add_option("--pretrain-r-steps", c.train.pretrain_r_steps);
  cmd->add_option("--pretrain-d-steps", c.train.pretrain_d_steps);
  cmd->add_option("--seed", c.train.seed, "training seed");
  cmd->add_option_function<std::string>(
         "--history-mode",
         [&c](const std::string& s) { c.train.history_mode = history_mode_from_string(s); },
         "augment|split")
      ->check(CLI::IsMember({"augment", "split"}));
  cmd->add_option_function<std::string>(
         "--psi",
         [&c](const std::string& s) { c.train.psi = feature_transform_from_string(s); },
         "identity|channel_mean|derivatives")
      ->check(CLI::IsMember({"identity", "channel_mean", "derivatives"}));
  cmd->add_flag_function(
      "--no-history", [&c](int64_t v) { c.train.use_history = (v == 0); },
      "disable the refined-image history buffer");
  cmd->add_flag("--global-adv", c.train.global_adv,
                "whole-image adversarial decision instead of per-patch");
  cmd->add_option("--decay-at-step", c.train.decay_at_step);
  cmd->add_option("--decay-lr-r", c.train.decay_lr_r);
  cmd->add_option("--decay-lr-d", c.train.decay_lr_d);
  cmd->add_option("--checkpoint-every", c.train.checkpoint_every);
  cmd->add_option("--refiner-preset", c.refiner_preset)
      ->check(CLI::IsMember({"desk", "paper_gaze", "paper_hand"}));
  cmd->add_option("--disc-preset", c.disc_preset)
      ->check(CLI::IsMember({"desk", "paper_gaze", "paper_hand"}));
}

void add_world_options(CLI::App* cmd, AppConfig& c) {
  cmd->add_option("--height", c.world.height);
  cmd->add_option("--width", c.world.width);
  cmd->add_option("--noise-sigma", c.world.noise_sigma);
  cmd->add_option("--blur-radius", c.world.blur_radius);
  cmd->add_option("--gain-lo", c.world.gain_lo);
  cmd->add_option("--gain-hi", c.world.gain_hi);
  cmd->add_option("--bias-lo", c.world.bias_lo);
  cmd->add_option("--bias-hi", c.world.bias_hi);
  cmd->add_option("--jitter-amp", c.world.jitter_amp);
  cmd->add_option("--n-synthetic", c.n_synthetic);
  cmd->add_option("--n-real", c.n_real);
  cmd->add_option("--n-real-test", c.n_real_test);
  cmd->add_option("--n-drift", c.n_drift);
  cmd->add_option("--synth-seed", c.synth_seed);
  cmd->add_option("--real-seed", c.real_seed);
  cmd->add_option("--real-test-seed", c.real_test_seed);
  cmd->add_option("--drift-seed", c.drift_seed);
}

void add_predictor_options(CLI::App* cmd, AppConfig& c) {
  cmd->add_option("--predictor-epochs", c.predictor_epochs);
  cmd->add_option("--predictor-lr", c.predictor_lr);
  cmd->add_option("--predictor-batch", c.predictor_batch);
  cmd->add_option("--predictor-train-n", c.predictor_train_n);
}

// ---------------------------------------------------------------------------
// run directory protocol
// ---------------------------------------------------------------------------

void write_config_echo(const AppConfig& c, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  std::ofstream f(run_dir / "config.json");
  if (!f) throw IoError("cannot write " + (run_dir / "config.json").string());
  f << app_config_json(c).dump(2) << "\n";
}

void mark_failed(const fs::path& run_dir, const std::string& why) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  std::ofstream f(run_dir / "FAILED");
  f << why << "\n";
}

template <typename F>
int guarded(const fs::path& run_dir, F&& body) {
  try {
    body();
    return 0;
  } catch (const NumericError& e) {
    mark_failed(run_dir, e.what());
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    mark_failed(run_dir, e.what());
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

Refiner load_refiner_flexible(const fs::path& ckpt) {
  // accept either a refiner checkpoint dir or a trainer checkpoint root
  if (fs::exists(ckpt / "manifest.json")) return load_refiner(ckpt);
  if (fs::exists(ckpt / "refiner" / "manifest.json")) return load_refiner(ckpt / "refiner");
  if (fs::exists(ckpt / "ckpt" / "refiner" / "manifest.json")) {
    return load_refiner(ckpt / "ckpt" / "refiner");
  }
  throw IoError("no refiner checkpoint under " + ckpt.string());
}

std::vector<AnnotatedImage> load_images(const fs::path& dir) {
  return load_dataset(dir).images;
}

void write_curves_csv(const fs::path& path, const EvalResult& refined,
                      const EvalResult& synthetic) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "train_data,metric,threshold,fraction_within\n";
  auto emit = [&f](const char* data, const char* metric, const CumulativeCurve& c) {
    char line[128];
    for (size_t i = 0; i < c.thresholds.size(); ++i) {
      std::snprintf(line, sizeof(line), "%s,%s,%.9g,%.9g\n", data, metric, c.thresholds[i],
                    c.fraction_within[i]);
      f << line;
    }
  };
  emit("refined", "pupil_px", refined.pupil_curve);
  emit("refined", "gaze_deg", refined.gaze_curve);
  emit("synthetic", "pupil_px", synthetic.pupil_curve);
  emit("synthetic", "gaze_deg", synthetic.gaze_curve);
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_data(const AppConfig& c, const fs::path& out) {
  return guarded(out, [&] {
    Dataset synth{simulate(c.world, c.n_synthetic, c.synth_seed), Role::synthetic, c.world,
                  c.synth_seed};
    save_dataset(synth, out / "synthetic");

    RealSample real = realize(c.world, c.n_real, c.real_seed);
    Dataset rd{std::move(real.images), Role::real, c.world, c.real_seed};
    save_dataset(rd, out / "real");
    std::cout << "wrote " << c.n_synthetic << " synthetic and " << c.n_real
              << " real images under " << out.string() << "\n";
  });
}

TrainerState make_trainer_from(const AppConfig& c) {
  return make_trainer(c.train, refiner_arch_from_preset(c.refiner_preset),
                      disc_arch_from_preset(c.disc_preset));
}

int cmd_pretrain(const AppConfig& c, const fs::path& synth_dir, const fs::path& real_dir,
                 const fs::path& run_dir) {
  return guarded(run_dir, [&] {
    write_config_echo(c, run_dir);
    auto synthetic = load_images(synth_dir);
    auto real = load_images(real_dir);
    TrainerState st = make_trainer_from(c);
    auto r_losses = pretrain_refiner(st, synthetic);
    auto d_losses = pretrain_discriminator(st, synthetic, real);
    if (st.config.use_history) seed_buffer(st, synthetic);
    save_trainer_state(st, run_dir / "ckpt");
    std::cout << "pretrained: refiner loss " << r_losses.front() << " -> " << r_losses.back()
              << ", discriminator loss " << d_losses.front() << " -> " << d_losses.back()
              << "\n";
  });
}

int cmd_train(const AppConfig& c, const fs::path& synth_dir, const fs::path& real_dir,
              const fs::path& run_dir, bool resume, bool allow_config_change) {
  return guarded(run_dir, [&] {
    auto synthetic = load_images(synth_dir);
    auto real = load_images(real_dir);

    TrainLog log;
    if (resume) {
      TrainerState st = load_trainer_state(run_dir / "ckpt", c.train, allow_config_change);
      TrainLog existing;
      if (fs::exists(run_dir / "log.csv")) existing = TrainLog::read_csv(run_dir / "log.csv");
      log = train(st, synthetic, real, &run_dir, &existing);
    } else {
      write_config_echo(c, run_dir);
      TrainerState st = make_trainer_from(c);
      log = run_training(st, synthetic, real, &run_dir);
    }
    const TrainLogRecord& last = log.records.back();
    std::cout << "trained to step " << last.step << "; loss_R " << last.loss_r << ", loss_D "
              << last.loss_d << ", mean P_fake(refined) " << last.mean_pfake_refined << "\n";
  });
}

int cmd_refine(const fs::path& ckpt, const fs::path& in, const fs::path& out, uint32_t batch) {
  try {
    Refiner r = load_refiner_flexible(ckpt);
    Tensor stack = load_tns(in);
    if (stack.rank() != 4) throw ShapeError("input stack must be rank 4 [N,C,H,W]");
    Tensor result(stack.shape());
    size_t per = stack.numel() / stack.dim(0);
    for (size_t off = 0; off < stack.dim(0); off += batch) {
      size_t bs = std::min<size_t>(batch, stack.dim(0) - off);
      std::vector<Tensor> imgs;
      imgs.reserve(bs);
      for (size_t i = 0; i < bs; ++i) imgs.push_back(image_from_batch(stack, off + i));
      Tensor refined = refine(r, stack_images(imgs));
      std::memcpy(result.data() + off * per, refined.data(), bs * per * sizeof(float));
    }
    save_tns(result, out);
    std::cout << "refined " << stack.dim(0) << " images -> " << out.string() << "\n";
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const AppConfig& c, const fs::path& ckpt, const fs::path& synth_dir,
             const fs::path& run_dir, bool probe) {
  return guarded(run_dir, [&] {
    write_config_echo(c, run_dir);
    Refiner refiner = load_refiner_flexible(ckpt);
    auto synthetic = load_images(synth_dir);
    if (synthetic.size() > c.predictor_train_n) {
      synthetic.erase(synthetic.begin() + c.predictor_train_n, synthetic.end());
    }
    auto refined = refine_dataset(refiner, synthetic);

    PredictorTrainOpts opts{c.predictor_epochs, c.predictor_batch, c.predictor_lr};
    uint64_t seed = c.train.seed;

    Predictor p_ref = build_predictor(c.world.height, c.world.width, seed);
    train_predictor(p_ref, refined, seed, opts);
    Predictor p_syn = build_predictor(c.world.height, c.world.width, seed);
    train_predictor(p_syn, synthetic, seed, opts);

    RealSample test = realize(c.world, c.n_real_test, c.real_test_seed);
    EvalResult e_ref = eval_predictor(p_ref, test.images, test.hidden_truth);
    EvalResult e_syn = eval_predictor(p_syn, test.images, test.hidden_truth);

    write_curves_csv(run_dir / "curves.csv", e_ref, e_syn);
    {
      std::ofstream f(run_dir / "summary.csv");
      if (!f) throw IoError("cannot write summary.csv");
      f << "train_data,mean_pupil_err_px,mean_gaze_err_deg,n\n";
      char line[128];
      std::snprintf(line, sizeof(line), "refined,%.9g,%.9g,%zu\n", e_ref.mean_pupil_err_px,
                    e_ref.mean_gaze_err_deg, e_ref.n);
      f << line;
      std::snprintf(line, sizeof(line), "synthetic,%.9g,%.9g,%zu\n", e_syn.mean_pupil_err_px,
                    e_syn.mean_gaze_err_deg, e_syn.n);
      f << line;
    }
    std::cout << "mean pupil error on the real test split: refined-trained "
              << e_ref.mean_pupil_err_px << " px, synthetic-trained " << e_syn.mean_pupil_err_px
              << " px\n";
    if (probe) {
      auto real = realize(c.world, c.n_real, c.real_seed);
      double pfake = probe_realism(refiner, synthetic, real.images, seed);
      std::ofstream f(run_dir / "probe.csv");
      f << "mean_pfake_refined\n" << pfake << "\n";
      std::cout << "probe discriminator mean P_fake(refined): " << pfake << "\n";
    }
  });
}

int cmd_drift(const AppConfig& c, const fs::path& ckpt, const fs::path& out_csv) {
  try {
    Refiner refiner = load_refiner_flexible(ckpt);
    auto held_out = simulate(c.world, c.n_drift, c.drift_seed);
    DriftResult d = annotation_drift(refiner, held_out);
    std::cout << "pupil-center drift over " << d.n << " images: mean " << d.mean_px
              << " px, std " << d.std_px << " px (" << d.oracle_failures
              << " oracle failures)\n";
    if (!out_csv.empty()) {
      std::ofstream f(out_csv);
      if (!f) throw IoError("cannot write " + out_csv.string());
      f << "mean_px,std_px,n,oracle_failures\n";
      f << d.mean_px << "," << d.std_px << "," << d.n << "," << d.oracle_failures << "\n";
    }
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_grad_check(uint32_t seeds, double eps) {
  try {
    double worst = 0.0;
    for (uint32_t s = 0; s < seeds; ++s) {
      auto cases = standard_grad_checks(1000 + s, eps);
      for (const auto& c : cases) {
        std::printf("seed %2u  %-14s max rel err %.3e\n", s, c.name.c_str(), c.max_rel_err);
        worst = std::max(worst, c.max_rel_err);
      }
    }
    std::printf("worst over all cases: %.3e (tolerance 1e-3)\n", worst);
    return worst < 1e-3 ? 0 : 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_export_study(const fs::path& real_dir, const fs::path& refined_path, const fs::path& out,
                     const std::vector<uint64_t>& counts, uint32_t cols) {
  return guarded(out, [&] {
    fs::create_directories(out);
    auto real = load_images(real_dir);
    std::vector<Tensor> real_px;
    for (const auto& img : real) real_px.push_back(img.pixels());

    std::vector<Tensor> refined_px;
    if (fs::is_directory(refined_path)) {
      for (const auto& img : load_images(refined_path)) refined_px.push_back(img.pixels());
    } else {
      refined_px = unstack_images(load_tns(refined_path));
    }

    size_t n = std::min(real_px.size(), refined_px.size());
    real_px.resize(n);
    refined_px.resize(n);
    export_image_grid_pgm(real_px, out / "real_grid.pgm", cols);
    export_image_grid_pgm(refined_px, out / "refined_grid.pgm", cols);

    // interleaved pairs for side-by-side comparison
    std::vector<Tensor> paired;
    paired.reserve(2 * n);
    for (size_t i = 0; i < n; ++i) {
      paired.push_back(real_px[i]);
      paired.push_back(refined_px[i]);
    }
    export_image_grid_pgm(paired, out / "paired_grid.pgm", 2);

    if (!counts.empty()) {
      if (counts.size() != 4) throw ConfigError("--counts expects 4 values: rr,rs,sr,ss");
      ConfusionMatrix m;
      m[0] = {counts[0], counts[1]};
      m[1] = {counts[2], counts[3]};
      export_confusion(m, out / "confusion.csv");
      std::cout << "study accuracy: " << confusion_accuracy(m) << "\n";
    }
    std::cout << "wrote study grids for " << n << " image pairs under " << out.string() << "\n";
  });
}

int cmd_sweep_lambda(const AppConfig& base, const std::vector<double>& values,
                     const fs::path& synth_dir, const fs::path& real_dir,
                     const fs::path& run_dir) {
  return guarded(run_dir, [&] {
    write_config_echo(base, run_dir);
    auto synthetic = load_images(synth_dir);
    auto real = load_images(real_dir);

    std::ofstream f(run_dir / "sweep.csv");
    if (!f) throw IoError("cannot write sweep.csv");
    f << "lambda,drift_mean_px,refined_err_px,synthetic_err_px,downstream_gain_px\n";

    // the synthetic-trained predictor is lambda-independent; score it once
    auto pred_train = synthetic;
    if (pred_train.size() > base.predictor_train_n) {
      pred_train.erase(pred_train.begin() + base.predictor_train_n, pred_train.end());
    }
    PredictorTrainOpts opts{base.predictor_epochs, base.predictor_batch, base.predictor_lr};
    RealSample test = realize(base.world, base.n_real_test, base.real_test_seed);
    Predictor p_syn = build_predictor(base.world.height, base.world.width, base.train.seed);
    train_predictor(p_syn, pred_train, base.train.seed, opts);
    EvalResult e_syn = eval_predictor(p_syn, test.images, test.hidden_truth);

    for (double lam : values) {
      AppConfig c = base;
      c.train.lambda = static_cast<float>(lam);
      TrainerState st = make_trainer_from(c);
      run_training(st, synthetic, real);

      auto held_out = simulate(c.world, c.n_drift, c.drift_seed);
      DriftResult d = annotation_drift(st.refiner, held_out);

      auto refined = refine_dataset(st.refiner, pred_train);
      Predictor p_ref = build_predictor(c.world.height, c.world.width, c.train.seed);
      train_predictor(p_ref, refined, c.train.seed, opts);
      EvalResult e_ref = eval_predictor(p_ref, test.images, test.hidden_truth);

      double gain = e_syn.mean_pupil_err_px - e_ref.mean_pupil_err_px;
      char line[160];
      std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g,%.9g,%.9g\n", lam, d.mean_px,
                    e_ref.mean_pupil_err_px, e_syn.mean_pupil_err_px, gain);
      f << line;
      f.flush();
      std::cout << "lambda " << lam << ": drift " << d.mean_px << " px, downstream gain "
                << gain << " px\n";
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// argv wiring
// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
  AppConfig cfg;
  try {
    cfg = load_app_config(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"simulator-image refinement workbench"};
  app.require_subcommand(1);

  // gen-data
  std::string out_dir;
  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic and real image sets");
  gen->add_option("--out", out_dir, "output directory")->required();
  add_world_options(gen, cfg);
  gen->add_option("--config", "flat JSON config file")->check(CLI::ExistingFile);

  // pretrain
  std::string synth_dir, real_dir, run_dir;
  CLI::App* pre = app.add_subcommand("pretrain", "self-regularization and discriminator warmup");
  pre->add_option("--synthetic", synth_dir)->required();
  pre->add_option("--real", real_dir)->required();
  pre->add_option("--run", run_dir, "run directory")->required();
  add_common_options(pre, cfg);

  // train
  bool resume = false, allow_config_change = false;
  CLI::App* tr = app.add_subcommand("train", "full adversarial training");
  tr->add_option("--synthetic", synth_dir)->required();
  tr->add_option("--real", real_dir)->required();
  tr->add_option("--run", run_dir, "run directory")->required();
  tr->add_flag("--resume", resume, "continue from the run's checkpoint");
  tr->add_flag("--allow-config-change", allow_config_change);
  add_common_options(tr, cfg);

  // refine
  std::string ckpt_dir, in_path, out_path;
  uint32_t refine_batch = 32;
  CLI::App* rf = app.add_subcommand("refine", "refine a TNS1 image stack");
  rf->add_option("--ckpt", ckpt_dir)->required();
  rf->add_option("--in", in_path)->required();
  rf->add_option("--out", out_path)->required();
  rf->add_option("--batch", refine_batch);

  // eval
  bool probe = false;
  CLI::App* ev = app.add_subcommand("eval", "downstream predictor protocol");
  ev->add_option("--ckpt", ckpt_dir)->required();
  ev->add_option("--synthetic", synth_dir)->required();
  ev->add_option("--run", run_dir)->required();
  ev->add_flag("--probe", probe, "also train a probe discriminator");
  add_common_options(ev, cfg);
  add_world_options(ev, cfg);
  add_predictor_options(ev, cfg);

  // drift
  std::string drift_csv;
  CLI::App* dr = app.add_subcommand("drift", "annotation preservation check");
  dr->add_option("--ckpt", ckpt_dir)->required();
  dr->add_option("--out", drift_csv, "optional CSV output");
  add_common_options(dr, cfg);
  add_world_options(dr, cfg);

  // grad-check
  uint32_t gc_seeds = 20;
  double gc_eps = 1e-2;
  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  gc->add_option("--seeds", gc_seeds, "number of randomized repetitions");
  gc->add_option("--eps", gc_eps, "central-difference step");

  // export-study
  std::string refined_path;
  std::vector<uint64_t> counts;
  uint32_t grid_cols = 8;
  CLI::App* ex = app.add_subcommand("export-study", "image grids and confusion-matrix export");
  ex->add_option("--real", real_dir)->required();
  ex->add_option("--refined", refined_path, "refined dataset dir or TNS1 stack")->required();
  ex->add_option("--out", out_dir)->required();
  ex->add_option("--counts", counts, "confusion counts: rr,rs,sr,ss")->delimiter(',');
  ex->add_option("--cols", grid_cols);

  // sweep-lambda
  std::vector<double> lambda_values;
  CLI::App* sw = app.add_subcommand("sweep-lambda", "calibrate the lambda default");
  sw->add_option("--values", lambda_values, "lambda values")->required()->delimiter(',');
  sw->add_option("--synthetic", synth_dir)->required();
  sw->add_option("--real", real_dir)->required();
  sw->add_option("--run", run_dir)->required();
  add_common_options(sw, cfg);
  add_world_options(sw, cfg);
  add_predictor_options(sw, cfg);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
    if (pre->parsed()) return cmd_pretrain(cfg, synth_dir, real_dir, run_dir);
    if (tr->parsed()) return cmd_train(cfg, synth_dir, real_dir, run_dir, resume,
                                       allow_config_change);
    if (rf->parsed()) return cmd_refine(ckpt_dir, in_path, out_path, refine_batch);
    if (ev->parsed()) return cmd_eval(cfg, ckpt_dir, synth_dir, run_dir, probe);
    if (dr->parsed()) return cmd_drift(cfg, ckpt_dir, drift_csv);
    if (gc->parsed()) return cmd_grad_check(gc_seeds, gc_eps);
    if (ex->parsed()) return cmd_export_study(real_dir, refined_path, out_dir, counts, grid_cols);
    if (sw->parsed()) return cmd_sweep_lambda(cfg, lambda_values, synth_dir, real_dir, run_dir);
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace simref
