#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "texsyn/common.hpp"

namespace texsyn {

// Every tunable default in one place; all keys can be set from a JSON config
// file and overridden by CLI flags of the same name.
struct Config {
  // model
  int latent_dim = 32;
  int n_freq = 16;
  int levels = 5;
  std::vector<int> channels = {512, 256, 128, 64, 32};
  int seed_channels = 512;
  int combiner_hidden = 256;
  int pred_hidden = 64;
  double f0 = 0.0;  // 0 = pi * 2^-levels (radians per output pixel)
  // training
  int crop = 128;
  int batch = 8;
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double rot_min = 0.0;
  double rot_max = 2.0 * kPi;
  double scale_min = 0.5;
  double scale_max = 2.0;
  int hist_dirs = 16;
  double w_style = 1.0;
  double w_adv = 1.0;
  double w_hist = 1.0;
  double w_spectral = 1.0;
  double w_ssl = 1.0;
  double lambda_gp = 10.0;
  int n_z = 64;
  int sampler_width = 128;
  int critic_steps = 5;
  int checkpoint_every = 500;
  // synthesis
  int stat_window = 0;  // 0 = level extent / 4, min 3
  int palette_grid = 16;
  // weights
  std::string vgg_weights;  // empty = seeded random features
  std::uint64_t init_seed = 777;

  double effective_f0() const {
    return f0 > 0.0 ? f0 : kPi * std::pow(2.0, -levels);
  }

  nlohmann::json to_json() const {
    return {
        {"latent_dim", latent_dim},
        {"n_freq", n_freq},
        {"levels", levels},
        {"channels", channels},
        {"seed_channels", seed_channels},
        {"combiner_hidden", combiner_hidden},
        {"pred_hidden", pred_hidden},
        {"f0", f0},
        {"crop", crop},
        {"batch", batch},
        {"lr", lr},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"rot_min", rot_min},
        {"rot_max", rot_max},
        {"scale_min", scale_min},
        {"scale_max", scale_max},
        {"hist_dirs", hist_dirs},
        {"w_style", w_style},
        {"w_adv", w_adv},
        {"w_hist", w_hist},
        {"w_spectral", w_spectral},
        {"w_ssl", w_ssl},
        {"lambda_gp", lambda_gp},
        {"n_z", n_z},
        {"sampler_width", sampler_width},
        {"critic_steps", critic_steps},
        {"checkpoint_every", checkpoint_every},
        {"stat_window", stat_window},
        {"palette_grid", palette_grid},
        {"vgg_weights", vgg_weights},
        {"init_seed", init_seed},
    };
  }

  static Config from_json(const nlohmann::json& j) {
    Config c;
    const nlohmann::json known = c.to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown config key: " + key);
      (void)value;
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("latent_dim", c.latent_dim);
    get("n_freq", c.n_freq);
    get("levels", c.levels);
    get("channels", c.channels);
    get("seed_channels", c.seed_channels);
    get("combiner_hidden", c.combiner_hidden);
    get("pred_hidden", c.pred_hidden);
    get("f0", c.f0);
    get("crop", c.crop);
    get("batch", c.batch);
    get("lr", c.lr);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("rot_min", c.rot_min);
    get("rot_max", c.rot_max);
    get("scale_min", c.scale_min);
    get("scale_max", c.scale_max);
    get("hist_dirs", c.hist_dirs);
    get("w_style", c.w_style);
    get("w_adv", c.w_adv);
    get("w_hist", c.w_hist);
    get("w_spectral", c.w_spectral);
    get("w_ssl", c.w_ssl);
    get("lambda_gp", c.lambda_gp);
    get("n_z", c.n_z);
    get("sampler_width", c.sampler_width);
    get("critic_steps", c.critic_steps);
    get("checkpoint_every", c.checkpoint_every);
    get("stat_window", c.stat_window);
    get("palette_grid", c.palette_grid);
    get("vgg_weights", c.vgg_weights);
    get("init_seed", c.init_seed);
    c.validate();
    return c;
  }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
    if (n_freq < 1) throw ConfigError("n_freq must be positive");
    if (levels < 2) throw ConfigError("levels must be at least 2");
    if (static_cast<int>(channels.size()) != levels)
      throw ConfigError("channels must list one width per level");
    for (int ch : channels)
      if (ch < 1) throw ConfigError("channel widths must be positive");
    if (crop < 32) throw ConfigError("crop must be at least 32 (feature extractor minimum)");
    if (batch < 1) throw ConfigError("batch must be positive");
    if (!(scale_min > 0.0) || scale_min > scale_max)
      throw ConfigError("scale range must satisfy 0 < scale_min <= scale_max");
    if (hist_dirs < 1) throw ConfigError("hist_dirs must be positive");
    if (w_style < 0 || w_adv < 0 || w_hist < 0 || w_spectral < 0 || w_ssl < 0 || lambda_gp < 0)
      throw ConfigError("loss weights must be non-negative");
  }
};

}  // namespace texsyn
