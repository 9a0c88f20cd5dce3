// texsyn: multi-texture auto-encoder command line.
//
// Subcommands: train, encode, resynth, sample, interp, palette, expand,
// selftest. Exit codes: 0 success, 1 usage/config error, 2 runtime error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "texsyn/editor.hpp"
#include "texsyn/image_io.hpp"
#include "texsyn/trainer.hpp"

namespace fs = std::filesystem;
using namespace texsyn;

namespace {

using Model = TextureModel<float>;

struct CommonArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out;
  std::string size_spec;
  std::uint64_t seed = 1;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_checkpoint = true) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  if (with_checkpoint) cmd->add_option("--checkpoint", args.checkpoint, "checkpoint directory");
  cmd->add_option("--seed", args.seed, "master seed for all randomness");
  cmd->add_option("--size", args.size_spec, "output size as HxW");
  cmd->add_option("--out", args.out, "output path");
  // every config key is overridable by a flag of the same name
  const nlohmann::json keys = Config().to_json();
  for (const auto& [key, value] : keys.items()) {
    (void)value;
    cmd->add_option_function<std::string>(
        "--" + key, [&args, k = key](const std::string& v) { args.overrides[k] = v; },
        "override config key '" + key + "'");
  }
}

nlohmann::json load_config_json(const CommonArgs& args) {
  nlohmann::json j = nlohmann::json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw ConfigError("cannot open config file: " + args.config_path);
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("malformed config file: " + std::string(e.what()));
    }
  }
  for (const auto& [key, raw] : args.overrides) {
    try {
      j[key] = nlohmann::json::parse(raw);
    } catch (...) {
      j[key] = raw;  // unquoted strings (e.g. paths)
    }
  }
  return j;
}

Config resolve_config(const CommonArgs& args) { return Config::from_json(load_config_json(args)); }

std::pair<int, int> parse_size(const std::string& spec, int def_h, int def_w) {
  if (spec.empty()) return {def_h, def_w};
  const auto x = spec.find('x');
  if (x == std::string::npos) throw ConfigError("--size expects HxW, got '" + spec + "'");
  try {
    return {std::stoi(spec.substr(0, x)), std::stoi(spec.substr(x + 1))};
  } catch (...) {
    throw ConfigError("--size expects HxW, got '" + spec + "'");
  }
}

std::unique_ptr<Model> load_model(const std::string& checkpoint, const CommonArgs& args,
                                  Config* cfg_out = nullptr) {
  if (checkpoint.empty()) throw IoError("--checkpoint is required for this command");
  TensorReader reader(checkpoint);
  nlohmann::json cfg_json = reader.manifest().at("config");
  for (const auto& [key, raw] : args.overrides) {
    try {
      cfg_json[key] = nlohmann::json::parse(raw);
    } catch (...) {
      cfg_json[key] = raw;
    }
  }
  const Config cfg = Config::from_json(cfg_json);
  auto model = std::make_unique<Model>(cfg);
  Trainer<float>::restore_model(reader, *model);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

void write_sidecar(const std::string& out_path, const std::string& command,
                   nlohmann::json params) {
  params["command"] = command;
  std::ofstream f(out_path + ".json", std::ios::trunc);
  f << params.dump(1) << "\n";
}

void save_code(const std::string& path, const Latent<float>& w) {
  nlohmann::json j;
  j["n_w"] = w.size();
  j["w"] = std::vector<float>(w.data(), w.data() + w.size());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write code file: " + path);
  f << j.dump(1) << "\n";
}

Latent<float> load_code(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open code file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw IoError("malformed code file " + path + ": " + e.what());
  }
  const auto values = j.at("w").get<std::vector<float>>();
  Latent<float> w(values.size());
  for (size_t i = 0; i < values.size(); ++i) w(i) = values[i];
  return w;
}

bool is_code_path(const std::string& path) {
  return path.size() > 5 && path.substr(path.size() - 5) == ".json";
}

// An image path is encoded on the fly; a .json path is read as a stored code.
Latent<float> code_from_path(const Model& model, const std::string& path) {
  if (is_code_path(path)) return load_code(path);
  return model.encode_image(load_image(path));
}

GenOptions<float> options_from_seed(std::uint64_t seed) {
  GenOptions<float> opt;
  opt.noise_seed = mix_seed({seed, 0x4E015EULL});
  opt.phase_seed = mix_seed({seed, 0x9A5E5ULL});
  return opt;
}

// --- subcommand bodies -------------------------------------------------------

struct TrainArgs {
  std::string data_dir;
  std::string resume;
  long steps = 2000;
};

int cmd_train(const CommonArgs& common, const TrainArgs& targs) {
  if (common.out.empty()) throw ConfigError("--out directory is required");
  fs::create_directories(common.out);
  std::unique_ptr<Model> model;
  std::unique_ptr<Trainer<float>> trainer;
  std::vector<Grid<float>> dataset = load_image_folder(targs.data_dir);
  std::printf("loaded %zu training image(s) from %s\n", dataset.size(), targs.data_dir.c_str());

  if (!targs.resume.empty()) {
    Config cfg;
    model = load_model(targs.resume, common, &cfg);
    trainer = std::make_unique<Trainer<float>>(*model, std::move(dataset), 0);
    trainer->load_checkpoint(targs.resume);
    std::printf("resumed from %s at step %ld\n", targs.resume.c_str(), trainer->step());
  } else {
    const Config cfg = resolve_config(common);
    model = std::make_unique<Model>(cfg);
    model->init_seeded(mix_seed({common.seed, 0x1417ULL}));
    trainer = std::make_unique<Trainer<float>>(*model, std::move(dataset), common.seed);
  }

  const std::string log_path = common.out + "/loss_log.csv";
  std::ofstream log(log_path, targs.resume.empty() ? std::ios::trunc : std::ios::app);
  if (targs.resume.empty()) log << "step,style,spectral,histogram,ssl,mapper,critic,total\n";

  const long start = trainer->step();
  const long target = start + targs.steps;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer->step() < target) {
    const LossRow row = trainer->train_step();
    log << row.step << ',' << row.style << ',' << row.spectral << ',' << row.histogram << ','
        << row.ssl << ',' << row.mapper << ',' << row.critic << ',' << row.total << '\n';
    log.flush();
    if (row.step % 25 == 0 || trainer->step() == target) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %ld  style %.5g  spe %.5g  hist %.5g  ssl %.5g  total %.5g  (%.2f s/step)\n",
                  row.step, row.style, row.spectral, row.histogram, row.ssl, row.total,
                  secs / std::max<long>(1, trainer->step() - start));
      std::fflush(stdout);
    }
    if (model->cfg.checkpoint_every > 0 && trainer->step() % model->cfg.checkpoint_every == 0)
      trainer->save_checkpoint(common.out + "/checkpoint_" + std::to_string(trainer->step()));
  }
  trainer->save_checkpoint(common.out + "/checkpoint_final");
  write_sidecar(common.out + "/train", "train",
                {{"data", targs.data_dir},
                 {"steps", targs.steps},
                 {"resume", targs.resume},
                 {"seed", common.seed},
                 {"config", model->cfg.to_json()}});
  std::printf("final checkpoint: %s/checkpoint_final\n", common.out.c_str());
  return 0;
}

int cmd_encode(const CommonArgs& common, const std::string& image_path) {
  auto model = load_model(common.checkpoint, common);
  const Latent<float> w = model->encode_image(load_image(image_path));
  const std::string out = common.out.empty() ? image_path + ".code.json" : common.out;
  save_code(out, w);
  write_sidecar(out, "encode",
                {{"image", image_path}, {"checkpoint", common.checkpoint}, {"out", out}});
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_resynth(const CommonArgs& common, const std::string& image_path) {
  if (common.out.empty()) throw ConfigError("--out is required");
  auto model = load_model(common.checkpoint, common);
  const Grid<float> image = load_image(image_path);
  const auto [h, w] = parse_size(common.size_spec, image.h, image.w);
  const Latent<float> code = model->enc.encode(model->vgg.forward(image));
  const Grid<float> out = model->gen.generate(model->per, code, h, w, options_from_seed(common.seed));
  save_png(common.out, out, -1.0f, 1.0f);
  write_sidecar(common.out, "resynth",
                {{"image", image_path},
                 {"checkpoint", common.checkpoint},
                 {"seed", common.seed},
                 {"size", std::to_string(h) + "x" + std::to_string(w)},
                 {"out", common.out}});
  std::printf("wrote %s\n", common.out.c_str());
  return 0;
}

int cmd_sample(const CommonArgs& common, int count) {
  if (common.out.empty()) throw ConfigError("--out is required");
  auto model = load_model(common.checkpoint, common);
  const auto [h, w] = parse_size(common.size_spec, 256, 256);
  const MatX<float> codes = sample_latent(model->mapper, count, mix_seed({common.seed, 0x5A3ULL}));
  for (int i = 0; i < count; ++i) {
    const GenOptions<float> opt =
        options_from_seed(mix_seed({common.seed, static_cast<std::uint64_t>(i)}));
    const Grid<float> img = model->gen.generate(model->per, codes.col(i), h, w, opt);
    std::string path = common.out;
    if (count > 1) {
      const auto dot = path.rfind('.');
      path = path.substr(0, dot) + "_" + std::to_string(i) + path.substr(dot);
    }
    save_png(path, img, -1.0f, 1.0f);
    std::printf("wrote %s\n", path.c_str());
  }
  write_sidecar(common.out, "sample",
                {{"checkpoint", common.checkpoint},
                 {"seed", common.seed},
                 {"count", count},
                 {"size", std::to_string(h) + "x" + std::to_string(w)},
                 {"out", common.out}});
  return 0;
}

int cmd_interp(const CommonArgs& common, const std::string& a, const std::string& b, double t) {
  if (common.out.empty()) throw ConfigError("--out is required");
  auto model = load_model(common.checkpoint, common);
  const Latent<float> wa = code_from_path(*model, a);
  const Latent<float> wb = code_from_path(*model, b);
  const Latent<float> w = interpolate_latents<float>(wa, wb, static_cast<float>(t));
  const auto [h, ww] = parse_size(common.size_spec, 256, 256);
  const Grid<float> img = model->gen.generate(model->per, w, h, ww, options_from_seed(common.seed));
  save_png(common.out, img, -1.0f, 1.0f);
  write_sidecar(common.out, "interp",
                {{"a", a},
                 {"b", b},
                 {"t", t},
                 {"checkpoint", common.checkpoint},
                 {"seed", common.seed},
                 {"size", std::to_string(h) + "x" + std::to_string(ww)},
                 {"out", common.out}});
  std::printf("wrote %s\n", common.out.c_str());
  return 0;
}

int cmd_palette(const CommonArgs& common, const std::string& spec_path, int expand_factor) {
  if (common.out.empty()) throw ConfigError("--out is required");
  Config cfg;
  auto model = load_model(common.checkpoint, common, &cfg);
  std::ifstream in(spec_path);
  if (!in) throw IoError("cannot open palette spec: " + spec_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("malformed palette spec: " + std::string(e.what()));
  }
  const auto corners = j.at("corners").get<std::vector<std::string>>();
  if (corners.size() != 4)
    throw ConfigError("palette spec must name exactly 4 corners (tl, tr, bl, br)");
  PaletteSpec<float> spec;
  for (int i = 0; i < 4; ++i) spec.corners[i] = code_from_path(*model, corners[i]);
  spec.field_h = spec.field_w = cfg.palette_grid;
  if (j.contains("resolution")) {
    spec.field_h = j["resolution"][0].get<int>();
    spec.field_w = j["resolution"][1].get<int>();
  }
  const auto [h, w] = parse_size(common.size_spec, 256, 256);
  GenOptions<float> opt = options_from_seed(common.seed);
  opt.stat_window = cfg.stat_window;
  const Grid<float> img = render_palette(model->gen, model->per, spec, h, w, expand_factor, opt);
  save_png(common.out, img, -1.0f, 1.0f);
  write_sidecar(common.out, "palette",
                {{"spec", spec_path},
                 {"checkpoint", common.checkpoint},
                 {"seed", common.seed},
                 {"expand", expand_factor},
                 {"size", std::to_string(h) + "x" + std::to_string(w)},
                 {"out", common.out}});
  std::printf("wrote %s\n", common.out.c_str());
  return 0;
}

int cmd_expand(const CommonArgs& common, const std::string& input, int factor) {
  if (common.out.empty()) throw ConfigError("--out is required");
  auto model = load_model(common.checkpoint, common);
  const Latent<float> w = code_from_path(*model, input);
  int base_h = 256, base_w = 256;
  if (!common.size_spec.empty()) {
    std::tie(base_h, base_w) = parse_size(common.size_spec, 256, 256);
  } else if (!is_code_path(input)) {
    const Grid<float> img = load_image(input);
    base_h = img.h;
    base_w = img.w;
  }
  const Grid<float> img =
      model->gen.expand(model->per, w, base_h, base_w, factor, options_from_seed(common.seed));
  save_png(common.out, img, -1.0f, 1.0f);
  write_sidecar(common.out, "expand",
                {{"input", input},
                 {"factor", factor},
                 {"checkpoint", common.checkpoint},
                 {"seed", common.seed},
                 {"size", std::to_string(base_h) + "x" + std::to_string(base_w)},
                 {"out", common.out}});
  std::printf("wrote %s\n", common.out.c_str());
  return 0;
}

// Quick oracle/invariant suites; nonzero exit on any failure.
int cmd_selftest() {
  int failures = 0;
  auto report = [&](const char* name, bool ok) {
    std::printf("%s %s\n", ok ? "ok  " : "FAIL", name);
    if (!ok) ++failures;
  };

  {  // quadratic extraction vs explicit Gram
    auto rng = make_rng(1);
    bool ok = true;
    for (int t = 0; t < 200 && ok; ++t) {
      const int c = 2 + static_cast<int>(splitmix64(reinterpret_cast<std::uint64_t&>(rng)) % 15);
      const int k = 1 + static_cast<int>(splitmix64(reinterpret_cast<std::uint64_t&>(rng)) % 64);
      MatX<double> f(c, k), m(4, c);
      fill_normal(rng, f, 1.0);
      fill_normal(rng, m, 1.0);
      const VecX<double> q = quadratic_extract<double>(f, m);
      const MatX<double> gram = f * f.transpose();
      for (int i = 0; i < 4 && ok; ++i) {
        const double ref = m.row(i) * gram * m.row(i).transpose();
        ok = std::abs(q(i) - ref) <= 1e-5 * std::max(1.0, std::abs(ref));
      }
    }
    report("quadratic extraction matches the explicit-Gram oracle", ok);
  }
  {  // partition of unity
    const int K = 5;
    const double f0 = kPi * std::pow(2.0, -K);
    auto rng = make_rng(2);
    bool ok = true;
    for (int t = 0; t < 2000 && ok; ++t) {
      const double mag =
          std::exp(uniform<double>(rng, std::log(2 * f0), std::log(f0 * std::pow(2.0, K))));
      double sum = 0;
      for (int k = 0; k < K; ++k) sum += level_weight<double>(mag, k, f0);
      ok = std::abs(sum - 1.0) <= 1e-6;
    }
    report("level weights form a partition of unity in band", ok);
  }
  {  // sine rendering vs scalar evaluation
    auto rng = make_rng(3);
    bool ok = true;
    for (int t = 0; t < 20 && ok; ++t) {
      MatX<double> f(2, 4);
      fill_normal(rng, f, 0.4);
      const VecX<double> ph = sample_phases<double>(4, rng);
      const int level = t % 3;
      const SineField<double> field = render_sine_field<double>(f, ph, level, 3, 6, 7);
      const double step = std::pow(2.0, 3 - 1 - level);
      for (int y = 0; y < 6 && ok; ++y)
        for (int x = 0; x < 7 && ok; ++x)
          for (int i = 0; i < 4 && ok; ++i)
            ok = std::abs(field.s(i, y * 7 + x) -
                          std::sin(f(0, i) * x * step + f(1, i) * y * step + ph(i))) <= 1e-6;
    }
    report("sine fields match per-pixel evaluation", ok);
  }
  {  // ssl analytics
    const double lo = ssl_loss<double>(0.1, 0.7, 0.3, 0.9, 1.0, 2.0, 1.5, 3.0);
    const double hi = ssl_loss<double>(0.0, kPi / 2, 0.0, 0.0, 1, 1, 1, 1);
    const double wrap = ssl_loss<double>(0.1, 0.7 + kPi, 0.3, 0.9, 1.0, 2.0, 1.5, 3.0);
    report("ssl loss analytic minimum/maximum/periodicity",
           std::abs(lo - (1 - kPi / 2)) < 1e-12 && std::abs(hi - 1.0) < 1e-12 &&
               std::abs(wrap - lo) < 1e-12);
  }
  {  // size planning recurrence
    const SizePlan p = plan_sizes(8, 8, 2);
    report("size plan recurrence", p.seed_h == 10 && p.levels[1].in_h == 12 && p.pre_h == 8);
  }
  {  // gradient penalty analytics on a zeroed critic
    LatentCritic<double> critic(4, 8);
    critic.init_seeded(4);
    std::vector<Parameter<double>*> params;
    critic.params(params);
    for (auto* p : params) p->v.setZero();
    auto rng = make_rng(5);
    MatX<double> w_hat(4, 6);
    fill_normal(rng, w_hat, 1.0);
    zero_grads(params);
    const double gp_zero = critic.gradient_penalty_backward(w_hat, 1.0);
    report("zero critic has unit gradient penalty", std::abs(gp_zero - 1.0) < 1e-12);
  }
  if (failures == 0)
    std::printf("selftest: all checks passed\n");
  else
    std::printf("selftest: %d check(s) failed\n", failures);
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"texsyn: feed-forward multi-texture auto-encoder"};
  app.require_subcommand(1);

  CommonArgs common;
  TrainArgs targs;
  std::string image_path, input_a, input_b, spec_path;
  double interp_t = 0.5;
  int count = 1, palette_expand = 1, expand_factor = 2;

  auto* train = app.add_subcommand("train", "train the full pipeline on an image folder");
  add_common(train, common, false);
  train->add_option("--data", targs.data_dir, "directory with training images")->required();
  train->add_option("--steps", targs.steps, "number of optimizer steps");
  train->add_option("--resume", targs.resume, "checkpoint directory to continue from");

  auto* encode = app.add_subcommand("encode", "embed an exemplar into the latent space");
  add_common(encode, common);
  encode->add_option("--image", image_path, "exemplar image")->required();

  auto* resynth = app.add_subcommand("resynth", "feed-forward resynthesis G(E(I))");
  add_common(resynth, common);
  resynth->add_option("--image", image_path, "exemplar image")->required();

  auto* sample = app.add_subcommand("sample", "exemplar-free sampling via the latent mapper");
  add_common(sample, common);
  sample->add_option("--count", count, "number of samples");

  auto* interp = app.add_subcommand("interp", "interpolate two textures in latent space");
  add_common(interp, common);
  interp->add_option("--a", input_a, "first image or stored code (.json)")->required();
  interp->add_option("--b", input_b, "second image or stored code (.json)")->required();
  interp->add_option("--t", interp_t, "interpolation parameter in [0,1]");

  auto* palette = app.add_subcommand("palette", "spatially varying blend of four exemplars");
  add_common(palette, common);
  palette->add_option("--spec", spec_path, "palette spec JSON (4 corners)")->required();
  palette->add_option("--expand", palette_expand, "expansion factor");

  auto* expand = app.add_subcommand("expand", "synthesize at an integer multiple of the base size");
  add_common(expand, common);
  expand->add_option("--input", input_a, "image or stored code (.json)")->required();
  expand->add_option("--factor", expand_factor, "expansion factor");

  app.add_subcommand("selftest", "run the built-in oracle and invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(common, targs);
    if (encode->parsed()) return cmd_encode(common, image_path);
    if (resynth->parsed()) return cmd_resynth(common, image_path);
    if (sample->parsed()) return cmd_sample(common, count);
    if (interp->parsed()) return cmd_interp(common, input_a, input_b, interp_t);
    if (palette->parsed()) return cmd_palette(common, spec_path, palette_expand);
    if (expand->parsed()) return cmd_expand(common, input_a, expand_factor);
    return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
