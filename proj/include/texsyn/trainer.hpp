#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "texsyn/checkpoint.hpp"
#include "texsyn/config.hpp"
#include "texsyn/encoder.hpp"
#include "texsyn/generator.hpp"
#include "texsyn/losses.hpp"
#include "texsyn/sampler.hpp"
#include "texsyn/vgg.hpp"

namespace texsyn {

// --- geometric augmentation ---------------------------------------------------

struct AugmentationSpec {
  double rot_min = 0.0;
  double rot_max = 2.0 * kPi;
  double scale_min = 0.5;
  double scale_max = 2.0;
  int crop = 128;
};

// Smallest square source that admits the requested crop under (s, theta).
inline int augment_min_source(double s, double theta, int crop) {
  const double spread = std::abs(std::cos(theta)) + std::abs(std::sin(theta));
  return static_cast<int>(std::ceil((crop - 1) * spread / s)) + 2;
}

// Rotate by theta, scale by s, take the centered axis-aligned crop. Every output
// pixel is bilinearly sampled from inside the source; padding never leaks in.
template <class S>
Grid<S> augment(const Grid<S>& src, double s, double theta, int crop) {
  if (!(s > 0.0)) throw DomainError("augment: scale must be positive");
  if (crop < 1) throw SizeError("augment: crop must be positive");
  const double cx = (src.w - 1) / 2.0, cy = (src.h - 1) / 2.0;
  const double half = (crop - 1) / 2.0;
  const double spread = std::abs(std::cos(theta)) + std::abs(std::sin(theta));
  if (half * spread / s > std::min(cx, cy) + 1e-9)
    throw SizeError("augment: source " + std::to_string(src.h) + "x" + std::to_string(src.w) +
                    " too small; need at least " + std::to_string(augment_min_source(s, theta, crop)) +
                    " px on each side for crop " + std::to_string(crop));
  const double c = std::cos(-theta), sn = std::sin(-theta);
  Grid<S> out(src.channels(), crop, crop);
  for (int r = 0; r < crop; ++r) {
    const double yd = (r - half) / s;
    for (int q = 0; q < crop; ++q) {
      const double xd = (q - half) / s;
      double xs = c * xd - sn * yd + cx;
      double ys = sn * xd + c * yd + cy;
      // in-bounds by the precheck; clamp only against float fuzz
      xs = std::min(std::max(xs, 0.0), static_cast<double>(src.w - 1));
      ys = std::min(std::max(ys, 0.0), static_cast<double>(src.h - 1));
      const int x0 = std::min(static_cast<int>(xs), src.w - 2 >= 0 ? src.w - 2 : 0);
      const int y0 = std::min(static_cast<int>(ys), src.h - 2 >= 0 ? src.h - 2 : 0);
      const S tx = static_cast<S>(xs - x0), ty = static_cast<S>(ys - y0);
      const auto v00 = src.chw.col(static_cast<Eigen::Index>(y0) * src.w + x0);
      const auto v01 = src.chw.col(static_cast<Eigen::Index>(y0) * src.w + std::min(x0 + 1, src.w - 1));
      const auto v10 = src.chw.col(static_cast<Eigen::Index>(std::min(y0 + 1, src.h - 1)) * src.w + x0);
      const auto v11 = src.chw.col(static_cast<Eigen::Index>(std::min(y0 + 1, src.h - 1)) * src.w +
                                   std::min(x0 + 1, src.w - 1));
      out.chw.col(static_cast<Eigen::Index>(r) * crop + q) =
          (v00 + tx * (v01 - v00)) + ty * ((v10 + tx * (v11 - v10)) - (v00 + tx * (v01 - v00)));
    }
  }
  return out;
}

// --- model aggregate ------------------------------------------------------------

template <class S>
struct TextureModel {
  Config cfg;
  VggFeatures<S> vgg;
  Encoder<S> enc;
  PeriodicSystem<S> per;
  Generator<S> gen;
  LatentMapper<S> mapper;
  LatentCritic<S> critic;

  explicit TextureModel(const Config& c)
      : cfg(c),
        enc(c.latent_dim, c.combiner_hidden),
        gen(make_gen_config(c)),
        mapper(c.n_z, c.latent_dim, c.sampler_width),
        critic(c.latent_dim, c.sampler_width) {
    per.init(c.n_freq, c.levels, c.latent_dim, c.pred_hidden);
    per.bank.f0 = static_cast<S>(c.effective_f0());
  }

  static GeneratorConfig make_gen_config(const Config& c) {
    GeneratorConfig g;
    g.levels = c.levels;
    g.channels = c.channels;
    g.seed_channels = c.seed_channels;
    g.n_w = c.latent_dim;
    g.n_freq = c.n_freq;
    return g;
  }

  void init_seeded(std::uint64_t seed) {
    if (!cfg.vgg_weights.empty()) {
      TensorReader reader(cfg.vgg_weights);
      std::vector<Parameter<S>*> vp;
      vgg.params(vp);
      for (auto* p : vp) p->v = reader.template get<S>(p->name, p->v.rows(), p->v.cols());
    } else {
      vgg.init_seeded(mix_seed({seed, 10}));
    }
    enc.init_seeded(mix_seed({seed, 11}));
    per.init_seeded(mix_seed({seed, 12}));
    gen.init_seeded(mix_seed({seed, 13}));
    mapper.init_seeded(mix_seed({seed, 14}));
    critic.init_seeded(mix_seed({seed, 15}));
  }

  // Parameters updated by the reconstruction objective.
  std::vector<Parameter<S>*> main_params() {
    std::vector<Parameter<S>*> out;
    enc.params(out);
    per.params(out);
    gen.params(out);
    return out;
  }
  std::vector<Parameter<S>*> critic_params() {
    std::vector<Parameter<S>*> out;
    critic.params(out);
    return out;
  }
  std::vector<Parameter<S>*> mapper_params() {
    std::vector<Parameter<S>*> out;
    mapper.params(out);
    return out;
  }
  std::vector<Parameter<S>*> all_params() {
    std::vector<Parameter<S>*> out;
    vgg.params(out);
    enc.params(out);
    per.params(out);
    gen.params(out);
    mapper.params(out);
    critic.params(out);
    return out;
  }

  Latent<S> encode_image(const Grid<S>& image) const { return enc.encode(vgg.forward(image)); }
};

// --- trainer ---------------------------------------------------------------------

struct LossRow {
  long step = 0;
  double style = 0, spectral = 0, histogram = 0, ssl = 0;
  double mapper = 0, critic = 0;
  double total = 0;
};

constexpr int kLossRingSize = 256;

template <class S>
class Trainer {
 public:
  Trainer(TextureModel<S>& model, std::vector<Grid<S>> dataset, std::uint64_t master_seed)
      : model_(model), dataset_(std::move(dataset)), master_seed_(master_seed) {
    if (dataset_.empty()) throw DomainError("trainer: dataset must contain at least one image");
    opt_main_.lr = static_cast<S>(model.cfg.lr);
    opt_main_.beta1 = static_cast<S>(model.cfg.adam_beta1);
    opt_main_.beta2 = static_cast<S>(model.cfg.adam_beta2);
    opt_critic_ = opt_main_;
    opt_mapper_ = opt_main_;
    main_params_ = model.main_params();
  }

  long step() const { return step_; }
  std::uint64_t master_seed() const { return master_seed_; }
  const std::deque<double>& loss_ring() const { return ring_; }
  TextureModel<S>& model() { return model_; }

  // One optimizer step over encoder, generator, periodic system and combiner,
  // followed by the adversarial sub-round on the latent sampler.
  LossRow train_step() {
    const Config& cfg = model_.cfg;
    const int B = cfg.batch;
    LossRow row;
    row.step = step_;
    zero_grads(main_params_);
    MatX<S> real_codes(cfg.latent_dim, B);
    const S inv_b = S(1) / static_cast<S>(B);

    for (int e = 0; e < B; ++e) {
      auto rng = make_rng({master_seed_, static_cast<std::uint64_t>(step_),
                           static_cast<std::uint64_t>(e), 0xA06ULL});
      const auto& img = dataset_[dataset_.size() == 1
                                     ? 0
                                     : static_cast<size_t>(std::uniform_int_distribution<size_t>(
                                           0, dataset_.size() - 1)(rng))];
      const double s0 = uniform<double>(rng, cfg.scale_min, cfg.scale_max);
      const double t0 = uniform<double>(rng, cfg.rot_min, cfg.rot_max);
      const Grid<S> view0 = augment(img, s0, t0, cfg.crop);

      // Encode; the same feature stack provides the style-loss targets.
      const FeatureStack<S> stack0 = model_.vgg.forward(view0);
      typename Encoder<S>::Cache enc_cache;
      const Latent<S> w0 = model_.enc.encode(stack0, &enc_cache);
      real_codes.col(e) = w0;

      GenOptions<S> gopt;
      gopt.noise_seed = mix_seed({master_seed_, static_cast<std::uint64_t>(step_),
                                  static_cast<std::uint64_t>(e), 0x4015EULL});
      gopt.phase_seed = mix_seed({master_seed_, static_cast<std::uint64_t>(step_),
                                  static_cast<std::uint64_t>(e), 0x9A5EULL});
      typename Generator<S>::Cache gen_cache;
      const Grid<S> recon = model_.gen.generate_cache(model_.per, w0, cfg.crop, cfg.crop, gopt,
                                                      gen_cache);
      Grid<S> recon01 = recon;
      recon01.chw = (recon.chw.array() + S(1)) * S(0.5);

      // Reconstruction losses and their gradient w.r.t. the [0,1] image.
      typename VggFeatures<S>::Cache vgg_cache;
      const FeatureStack<S> stack_r = model_.vgg.forward(recon01, &vgg_cache);
      std::array<Grid<S>, 5> taps;
      const S l_style = style_loss_from_stacks<S>(stack0, stack_r, &taps);
      check_finite("style", static_cast<double>(l_style));
      for (auto& t : taps) t.chw *= static_cast<S>(cfg.w_style) * inv_b;
      Grid<S> d_recon01 = model_.vgg.backward(vgg_cache, taps);

      Grid<S> d_spec, d_hist;
      const S l_spec = spectral_loss<S>(view0, recon01, &d_spec);
      const S l_hist = sliced_hist_loss<S>(view0, recon01, cfg.hist_dirs,
                                           mix_seed({master_seed_, static_cast<std::uint64_t>(step_),
                                                     static_cast<std::uint64_t>(e), 0x415CULL}),
                                           &d_hist);
      check_finite("spectral", static_cast<double>(l_spec));
      check_finite("histogram", static_cast<double>(l_hist));
      d_recon01.chw += static_cast<S>(cfg.w_spectral) * inv_b * d_spec.chw +
                       static_cast<S>(cfg.w_hist) * inv_b * d_hist.chw;

      // Self-supervised pair: the main crop doubles as view 0.
      const double s1 = uniform<double>(rng, cfg.scale_min, cfg.scale_max);
      const double t1 = uniform<double>(rng, cfg.rot_min, cfg.rot_max);
      const Grid<S> view1 = augment(img, s1, t1, cfg.crop);
      typename Encoder<S>::Cache enc_cache1;
      const Latent<S> w1 = model_.enc.encode(model_.vgg.forward(view1), &enc_cache1);
      typename TransformPredictor<S>::Cache pred_cache1;
      const TransformParams<S> tp1 = model_.per.pred.predict(w1, &pred_cache1);
      const TransformParams<S>& tp0 = gen_cache.tp;
      SslGrads<S> sg;
      const S l_ssl = ssl_loss<S>(static_cast<S>(t0), static_cast<S>(t1), tp0.theta, tp1.theta,
                                  static_cast<S>(s0), static_cast<S>(s1), tp0.s(), tp1.s(), &sg);
      const S wssl = static_cast<S>(cfg.w_ssl) * inv_b;

      // Backward: image-space gradient through the generator, plus the SSL
      // contribution folded into this sample's Pred outputs.
      Grid<S> d_recon = d_recon01;
      d_recon.chw *= S(0.5);  // recon01 = (recon + 1)/2
      const Latent<S> dw0 = model_.gen.backward(model_.per, gen_cache, d_recon,
                                                wssl * sg.d_s_pred0 * tp0.s(),
                                                wssl * sg.d_theta_pred0);
      model_.enc.backward(enc_cache, dw0);
      const Latent<S> dw1 = model_.per.pred.backward(pred_cache1, wssl * sg.d_s_pred1 * tp1.s(),
                                                     wssl * sg.d_theta_pred1);
      model_.enc.backward(enc_cache1, dw1);

      row.style += static_cast<double>(l_style) / B;
      row.spectral += static_cast<double>(l_spec) / B;
      row.histogram += static_cast<double>(l_hist) / B;
      row.ssl += static_cast<double>(l_ssl) / B;
    }

    check_finite("style", row.style);
    check_finite("spectral", row.spectral);
    check_finite("histogram", row.histogram);
    check_finite("ssl", row.ssl);
    opt_main_.step(main_params_);
    model_.per.bank.clamp_nyquist();

    // Adversarial sub-step on detached codes; excluded from the main objective.
    const auto [c_loss, m_loss] = adversarial_round<S>(
        model_.mapper, model_.critic, opt_mapper_, opt_critic_, real_codes, model_.cfg.critic_steps,
        static_cast<S>(cfg.lambda_gp), mix_seed({master_seed_, static_cast<std::uint64_t>(step_), 0xADFULL}));
    row.critic = static_cast<double>(c_loss);
    row.mapper = static_cast<double>(m_loss);
    check_finite("adversarial", row.critic);

    LossWeights lw;
    lw.style = cfg.w_style;
    lw.adversarial = cfg.w_adv;
    lw.histogram = cfg.w_hist;
    lw.spectral = cfg.w_spectral;
    lw.ssl = cfg.w_ssl;
    LossReport rep;
    rep.style = row.style;
    rep.adversarial = row.mapper;
    rep.histogram = row.histogram;
    rep.spectral = row.spectral;
    rep.ssl = row.ssl;
    row.total = rep.total(lw);
    push_ring(row.total);
    ++step_;
    return row;
  }

  // Standalone SSL pair evaluation on fresh augmentation draws; gradients flow
  // to the encoder and Pred when `accumulate` is set.
  S ssl_pair_step(const Grid<S>& image, std::uint64_t seed, bool accumulate = false) {
    const Config& cfg = model_.cfg;
    auto rng = make_rng({seed, 0x55ULL});
    const double s0 = uniform<double>(rng, cfg.scale_min, cfg.scale_max);
    const double t0 = uniform<double>(rng, cfg.rot_min, cfg.rot_max);
    const double s1 = uniform<double>(rng, cfg.scale_min, cfg.scale_max);
    const double t1 = uniform<double>(rng, cfg.rot_min, cfg.rot_max);
    typename Encoder<S>::Cache ec0, ec1;
    typename TransformPredictor<S>::Cache pc0, pc1;
    const Latent<S> w0 = model_.enc.encode(model_.vgg.forward(augment(image, s0, t0, cfg.crop)), &ec0);
    const Latent<S> w1 = model_.enc.encode(model_.vgg.forward(augment(image, s1, t1, cfg.crop)), &ec1);
    const TransformParams<S> tp0 = model_.per.pred.predict(w0, &pc0);
    const TransformParams<S> tp1 = model_.per.pred.predict(w1, &pc1);
    SslGrads<S> sg;
    const S loss = ssl_loss<S>(static_cast<S>(t0), static_cast<S>(t1), tp0.theta, tp1.theta,
                               static_cast<S>(s0), static_cast<S>(s1), tp0.s(), tp1.s(), &sg);
    if (accumulate) {
      model_.enc.backward(ec0, model_.per.pred.backward(pc0, sg.d_s_pred0 * tp0.s(), sg.d_theta_pred0));
      model_.enc.backward(ec1, model_.per.pred.backward(pc1, sg.d_s_pred1 * tp1.s(), sg.d_theta_pred1));
    }
    return loss;
  }

  // --- checkpointing -----------------------------------------------------------

  void save_checkpoint(const std::string& dir) {
    TensorWriter writer;
    std::vector<Parameter<S>*> all = model_.all_params();
    for (auto* p : all) writer.add(p->name, p->v);
    for (auto* p : all) {
      if (!p->trainable) continue;
      writer.add(p->name + ".adam_m", p->m);
      writer.add(p->name + ".adam_v", p->vm);
    }
    nlohmann::json meta;
    meta["kind"] = "texsyn-checkpoint";
    meta["step"] = step_;
    meta["master_seed"] = master_seed_;
    meta["adam_t"] = {{"main", opt_main_.t}, {"critic", opt_critic_.t}, {"mapper", opt_mapper_.t}};
    meta["config"] = model_.cfg.to_json();
    meta["loss_ring"] = std::vector<double>(ring_.begin(), ring_.end());
    writer.write(dir, std::move(meta));
  }

  void load_checkpoint(const std::string& dir) {
    TensorReader reader(dir);
    restore_model(reader, model_);
    const auto& meta = reader.manifest();
    step_ = meta.at("step").get<long>();
    master_seed_ = meta.at("master_seed").get<std::uint64_t>();
    opt_main_.t = meta.at("adam_t").at("main").get<long>();
    opt_critic_.t = meta.at("adam_t").at("critic").get<long>();
    opt_mapper_.t = meta.at("adam_t").at("mapper").get<long>();
    ring_.clear();
    for (double v : meta.value("loss_ring", std::vector<double>{})) ring_.push_back(v);
    std::vector<Parameter<S>*> all = model_.all_params();
    for (auto* p : all) {
      if (!p->trainable) continue;
      p->m = reader.template get<S>(p->name + ".adam_m", p->m.rows(), p->m.cols());
      p->vm = reader.template get<S>(p->name + ".adam_v", p->vm.rows(), p->vm.cols());
    }
  }

  // Weights-only restore (no optimizer state), for inference-side consumers.
  static void restore_model(const TensorReader& reader, TextureModel<S>& model) {
    std::vector<Parameter<S>*> all = model.all_params();
    for (auto* p : all) p->v = reader.template get<S>(p->name, p->v.rows(), p->v.cols());
  }

 private:
  void check_finite(const char* term, double v) const {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite ") + term + " loss at step " +
                         std::to_string(step_));
  }
  void push_ring(double v) {
    ring_.push_back(v);
    while (ring_.size() > kLossRingSize) ring_.pop_front();
  }

  TextureModel<S>& model_;
  std::vector<Grid<S>> dataset_;
  std::uint64_t master_seed_ = 0;
  long step_ = 0;
  AdamOptimizer<S> opt_main_, opt_critic_, opt_mapper_;
  std::vector<Parameter<S>*> main_params_;
  std::deque<double> ring_;
};

}  // namespace texsyn
