#include "sgan/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sgan/error.hpp"
#include "sgan/ops.hpp"

namespace sgan {

namespace o = ops;

std::string to_string(TrainMode m) { return m == TrainMode::kJoint ? "joint" : "sequential"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "joint") return TrainMode::kJoint;
  if (s == "sequential") return TrainMode::kSequential;
  throw ConfigError("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  network.validate();
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(lr >= 0)) fail("lr must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (!(mapping_lr_multiplier >= 0)) fail("mapping_lr_multiplier must be non-negative");
  if (!(r1_gamma >= 0)) fail("r1_gamma must be non-negative");
  if (r1_interval < 1) fail("r1_interval must be at least 1");
  if (batch_size < 1) fail("batch_size must be positive");
  const int group = std::min(network.mbstd_group, batch_size);
  if (group > 0 && batch_size % group != 0) fail("batch_size must be a multiple of mbstd_group");
  if (total_steps < 0) fail("total_steps must be non-negative");
  if (!(ema_decay >= 0 && ema_decay <= 1)) fail("ema_decay must lie in [0, 1]");
  if (!(hflip_prob >= 0 && hflip_prob <= 1)) fail("hflip_prob must lie in [0, 1]");
  if (!(sequential_split > 0 && sequential_split < 1)) fail("sequential_split must lie in (0, 1)");
  if (log_every < 1) fail("log_every must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
  for (double w : {weights.adv_d, weights.adv_g, weights.domain_guided_d, weights.domain_guided_eg,
                   weights.latent_recon, weights.image_recon, weights.perceptual})
    if (!(w >= 0) || !std::isfinite(w)) fail("loss weights must be finite and non-negative");
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"network", c.network},
           {"weights", c.weights},
           {"lr", c.lr},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"mapping_lr_multiplier", c.mapping_lr_multiplier},
           {"r1_gamma", c.r1_gamma},
           {"r1_interval", c.r1_interval},
           {"batch_size", c.batch_size},
           {"total_steps", c.total_steps},
           {"ema_decay", c.ema_decay},
           {"ema_warmup", c.ema_warmup},
           {"hflip_prob", c.hflip_prob},
           {"seed", c.seed},
           {"mode", to_string(c.mode)},
           {"sequential_split", c.sequential_split},
           {"dataset", c.dataset},
           {"data_seed", c.data_seed},
           {"log_every", c.log_every},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const Json& j, TrainConfig& c) {
  reject_unknown_keys(j,
                      {"network", "weights", "lr", "beta1", "beta2", "adam_eps", "mapping_lr_multiplier", "r1_gamma",
                       "r1_interval", "batch_size", "total_steps", "ema_decay", "ema_warmup", "hflip_prob", "seed",
                       "mode", "sequential_split", "dataset", "data_seed", "log_every", "checkpoint_every"},
                      "train");
  try {
    if (j.contains("network")) c.network = j.at("network").get<NetworkConfig>();
    if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
    auto opt = [&](const char* k, auto& v) {
      if (j.contains(k)) v = j.at(k).get<std::decay_t<decltype(v)>>();
    };
    opt("lr", c.lr);
    opt("beta1", c.beta1);
    opt("beta2", c.beta2);
    opt("adam_eps", c.adam_eps);
    opt("mapping_lr_multiplier", c.mapping_lr_multiplier);
    opt("r1_gamma", c.r1_gamma);
    opt("r1_interval", c.r1_interval);
    opt("batch_size", c.batch_size);
    opt("total_steps", c.total_steps);
    opt("ema_decay", c.ema_decay);
    opt("ema_warmup", c.ema_warmup);
    opt("hflip_prob", c.hflip_prob);
    opt("seed", c.seed);
    opt("sequential_split", c.sequential_split);
    opt("dataset", c.dataset);
    opt("data_seed", c.data_seed);
    opt("log_every", c.log_every);
    opt("checkpoint_every", c.checkpoint_every);
    if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  const Bytes raw = read_file(path);
  Json j;
  try {
    j = Json::parse(raw.begin(), raw.end());
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

Tensor<float> augment(const Tensor<float>& batch, double hflip_prob, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("augment: expected [N, C, H, W], got " + batch.shape().str());
  Tensor<float> out = batch;
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (int i = 0; i < n; ++i) {
    if (!(rng.uniform() < hflip_prob)) continue;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(i, ch, y, x) = batch.at(i, ch, y, w - 1 - x);
  }
  return out;
}

void write_log(std::ostream& os, long step, const LossBundle& b) {
  for (const auto& [name, value] : b.items()) {
    Json rec{{"step", step}, {"name", name}};
    // JSON has no NaN or infinity.
    if (std::isfinite(value))
      rec["value"] = value;
    else
      rec["value"] = nullptr;
    os << rec.dump() << '\n';
  }
  os.flush();
}

namespace {

constexpr std::uint64_t kRngSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kBatchSalt = 0xBF58476D1CE4E5B9ULL;

/// Running weighted sum of scalar losses; zero weights drop the term.
struct Total {
  Var<float> v;
  void add(const Var<float>& term, double w) {
    if (w == 0) return;
    const Var<float> t = w == 1 ? term : o::mul_scalar(term, static_cast<float>(w));
    v = v.defined() ? o::add(v, t) : t;
  }
  double value() const { return v.defined() ? static_cast<double>(v.value()[0]) : 0.0; }
};

double scalar(const Var<float>& v) { return static_cast<double>(v.value()[0]); }

/// Gradient of `loss` for each optimizer's parameters, then one step each.
void apply(const Var<float>& loss, std::initializer_list<Adam*> opts) {
  std::vector<Var<float>> all;
  for (Adam* a : opts)
    for (const auto& v : a->vars()) all.push_back(v);
  const std::vector<Var<float>> g = ag::grad<float>(loss, all);
  size_t k = 0;
  for (Adam* a : opts) {
    const size_t n = a->vars().size();
    a->step(std::vector<Var<float>>(g.begin() + static_cast<std::ptrdiff_t>(k),
                                    g.begin() + static_cast<std::ptrdiff_t>(k + n)));
    k += n;
  }
}

void add_params(Archive& a, const std::string& prefix, const ParamList<float>& ps) {
  for (const auto& p : ps) a.add(prefix + p.name, p.var.value());
}

void read_params(const Archive& a, const std::string& prefix, const ParamList<float>& ps) {
  for (const auto& p : ps) {
    const Tensor<float>& t = a.at(prefix + p.name);
    if (t.shape() != p.var.shape())
      throw IoError("checkpoint: shape mismatch for " + p.name + ": " + t.shape().str() + " vs " +
                    p.var.shape().str());
    Var<float> v = p.var;
    v.mutable_value() = t;
  }
}

void add_adam(Archive& a, const std::string& key, const Adam& opt) {
  const auto names = opt.names();
  for (size_t k = 0; k < names.size(); ++k) {
    a.add("adam/" + key + "/m/" + names[k], opt.first_moments()[k]);
    a.add("adam/" + key + "/v/" + names[k], opt.second_moments()[k]);
  }
}

void read_adam(const Archive& a, const std::string& key, Adam& opt) {
  const auto names = opt.names();
  for (size_t k = 0; k < names.size(); ++k) {
    Tensor<float>& m = opt.first_moments()[k];
    Tensor<float>& v = opt.second_moments()[k];
    const Tensor<float>& sm = a.at("adam/" + key + "/m/" + names[k]);
    const Tensor<float>& sv = a.at("adam/" + key + "/v/" + names[k]);
    if (sm.shape() != m.shape() || sv.shape() != v.shape())
      throw IoError("checkpoint: optimizer state shape mismatch for " + names[k]);
    m = sm;
    v = sv;
  }
}

TrainConfig config_of(const Archive& a) {
  if (a.metadata.value("format", "") != "sgan-checkpoint") throw IoError("checkpoint: unexpected format tag");
  try {
    return a.metadata.at("train").get<TrainConfig>();
  } catch (const Json::exception& e) {
    throw IoError(std::string("checkpoint: bad metadata: ") + e.what());
  }
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg)
    : Trainer(cfg, std::shared_ptr<const ImageSource>(
                       open_dataset(cfg.dataset, Split::kTrain, cfg.network.image_size, cfg.data_seed))) {}

Trainer::Trainer(const TrainConfig& cfg, std::shared_ptr<const ImageSource> data)
    : cfg_(cfg),
      data_(std::move(data)),
      rng_(cfg.seed ^ kRngSalt),
      batcher_(data_ ? data_->size() : 0, cfg.batch_size, cfg.seed ^ kBatchSalt) {
  cfg_.validate();
  if (data_->image_size() != cfg_.network.image_size)
    throw ConfigError("dataset image size " + std::to_string(data_->image_size()) + " does not match network " +
                      std::to_string(cfg_.network.image_size));
  model_ = SpatialGan<float>(cfg_.network, cfg_.seed);
  ema_ = model_.clone();
  init();
}

void Trainer::init() {
  const double lr = cfg_.lr;
  adam_f_ = Adam({{model_.mapping_params(), lr * cfg_.mapping_lr_multiplier}}, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  adam_g_ = Adam({{model_.generator_params(), lr}}, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  adam_e_ = Adam({{model_.encoder_params(), lr}}, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  adam_d_ = Adam({{model_.discriminator_params(), lr}}, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  ema_f_ = EmaState(ema_.mapping_params(), model_.mapping_params(), cfg_.ema_decay, cfg_.ema_warmup);
  ema_g_ = EmaState(ema_.generator_params(), model_.generator_params(), cfg_.ema_decay, cfg_.ema_warmup);
  ema_e_ = EmaState(ema_.encoder_params(), model_.encoder_params(), cfg_.ema_decay, cfg_.ema_warmup);
}

int Trainer::phase() const {
  if (cfg_.mode == TrainMode::kJoint) return 0;
  const auto split = static_cast<long>(std::llround(cfg_.sequential_split * static_cast<double>(cfg_.total_steps)));
  return step_ < split ? 1 : 2;
}

void Trainer::check(const LossBundle& b, const char* stage) const {
  if (b.all_finite()) return;
  Json rec{{"event", "training_diverged"}, {"step", step_}, {"stage", stage}, {"phase", phase()}};
  Json losses = Json::object();
  for (const auto& [name, value] : b.items()) {
    if (std::isfinite(value))
      losses[name] = value;
    else
      losses[name] = std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  }
  rec["losses"] = losses;
  throw TrainingDiverged("non-finite loss at step " + std::to_string(step_) + " (" + stage + ")", rec.dump());
}

void Trainer::d_step(const Tensor<float>& real, bool domain_guided, LossBundle& b) {
  const LossWeights& w = cfg_.weights;
  const int n = real.dim(0);
  const Critic<float> critic = [this](const Var<float>& x) { return model_.discriminate(x); };
  Tensor<float> fake, recon;
  {
    ag::NoGradGuard off;
    const Var<float> z(rng_.normal_tensor<float>(Shape{n, cfg_.network.latent_dim}));
    fake = model_.generate(model_.map(z)).value();
    if (domain_guided && w.domain_guided_d != 0) recon = model_.generate(model_.encode(Var<float>(real))).value();
  }
  Total total;
  const Var<float> adv = adv_d_loss(critic(Var<float>(real)), critic(Var<float>(fake)));
  b.adv_d = scalar(adv);
  total.add(adv, w.adv_d);
  if (!recon.empty()) {
    const Var<float> dg = o::mean(o::softplus(critic(Var<float>(recon))));
    b.domain_guided_d = scalar(dg);
    total.add(dg, w.domain_guided_d);
  }
  if (cfg_.r1_gamma > 0 && r1_due(step_, cfg_.r1_interval)) {
    const Var<float> r1 = r1_penalty(critic, real, static_cast<float>(cfg_.r1_gamma));
    b.r1 = scalar(r1);
    total.add(r1, static_cast<double>(cfg_.r1_interval));
  }
  b.d_total = total.value();
  check(b, "discriminator");
  if (total.v.defined()) apply(total.v, {&adam_d_});
}

LossBundle Trainer::joint_step(const Tensor<float>& real) {
  const LossWeights& w = cfg_.weights;
  const int n = real.dim(0);
  LossBundle b;
  d_step(real, true, b);

  Total total;
  const Var<float> z(rng_.normal_tensor<float>(Shape{n, cfg_.network.latent_dim}));
  const Var<float> w_fake = model_.map(z);
  const Var<float> fake = model_.generate(w_fake);
  const Var<float> adv = adv_g_loss(model_.discriminate(fake));
  b.adv_g = scalar(adv);
  total.add(adv, w.adv_g);
  if (w.latent_recon != 0) {
    const Var<float> lr = latent_recon_loss(w_fake, model_.encode(fake));
    b.latent_recon = scalar(lr);
    total.add(lr, w.latent_recon);
  }
  const Var<float> x(real);
  const Var<float> x_rec = model_.generate(model_.encode(x));
  const Var<float> ir = image_recon_loss(x, x_rec);
  b.image_recon = scalar(ir);
  total.add(ir, w.image_recon);
  if (w.perceptual != 0) {
    const Var<float> pl = perceptual_loss(x_rec, x, features_);
    b.perceptual = scalar(pl);
    total.add(pl, w.perceptual);
  }
  if (w.domain_guided_eg != 0) {
    const Var<float> dg = adv_g_loss(model_.discriminate(x_rec));
    b.domain_guided_eg = scalar(dg);
    total.add(dg, w.domain_guided_eg);
  }
  b.g_total = total.value();
  check(b, "generator");
  if (total.v.defined()) apply(total.v, {&adam_f_, &adam_g_, &adam_e_});
  ema_f_.update();
  ema_g_.update();
  ema_e_.update();
  return b;
}

LossBundle Trainer::sequential_step(const Tensor<float>& real) {
  const LossWeights& w = cfg_.weights;
  const int n = real.dim(0);
  LossBundle b;
  if (phase() == 1) {
    d_step(real, false, b);
    const Var<float> z(rng_.normal_tensor<float>(Shape{n, cfg_.network.latent_dim}));
    const Var<float> adv = adv_g_loss(model_.discriminate(model_.generate(model_.map(z))));
    b.adv_g = scalar(adv);
    Total total;
    total.add(adv, w.adv_g);
    b.g_total = total.value();
    check(b, "generator");
    if (total.v.defined()) apply(total.v, {&adam_f_, &adam_g_});
    ema_f_.update();
    ema_g_.update();
    return b;
  }

  Tensor<float> w_fake, fake;
  {
    ag::NoGradGuard off;
    const Var<float> z(rng_.normal_tensor<float>(Shape{n, cfg_.network.latent_dim}));
    const Var<float> wf = model_.map(z);
    w_fake = wf.value();
    fake = model_.generate(wf).value();
  }
  Total total;
  if (w.latent_recon != 0) {
    const Var<float> lr = latent_recon_loss(Var<float>(w_fake), model_.encode(Var<float>(fake)));
    b.latent_recon = scalar(lr);
    total.add(lr, w.latent_recon);
  }
  const Var<float> x(real);
  const Var<float> x_rec = model_.generate(model_.encode(x));
  const Var<float> ir = image_recon_loss(x, x_rec);
  b.image_recon = scalar(ir);
  total.add(ir, w.image_recon);
  if (w.perceptual != 0) {
    const Var<float> pl = perceptual_loss(x_rec, x, features_);
    b.perceptual = scalar(pl);
    total.add(pl, w.perceptual);
  }
  b.g_total = total.value();
  check(b, "encoder");
  if (total.v.defined()) apply(total.v, {&adam_e_});
  ema_e_.update();
  return b;
}

LossBundle Trainer::train_step(const Tensor<float>& real) {
  if (real.shape() != cfg_.network.image_shape(real.rank() == 4 ? real.dim(0) : 0))
    throw ShapeError("train_step: expected an image batch, got " + real.shape().str());
  const LossBundle b = cfg_.mode == TrainMode::kJoint ? joint_step(real) : sequential_step(real);
  ++step_;
  return b;
}

LossBundle Trainer::next() {
  const Tensor<float> batch = gather(*data_, batcher_.next());
  return train_step(augment(batch, cfg_.hflip_prob, rng_));
}

void Trainer::run(long until, std::ostream* log, const std::function<void(long, const LossBundle&)>& on_step) {
  while (step_ < until) {
    const long s = step_;
    const LossBundle b = next();
    if (log && (s % cfg_.log_every == 0 || step_ == until)) write_log(*log, s, b);
    if (on_step) on_step(s, b);
  }
}

Archive Trainer::to_archive() const {
  Archive a;
  a.metadata = Json{{"format", "sgan-checkpoint"},
                    {"train", cfg_},
                    {"step", step_},
                    {"rng", rng_.state()},
                    {"batcher_position", batcher_.position()},
                    {"adam_steps", {{"F", adam_f_.steps()}, {"G", adam_g_.steps()}, {"E", adam_e_.steps()},
                                    {"D", adam_d_.steps()}}},
                    {"ema_updates", {{"F", ema_f_.updates()}, {"G", ema_g_.updates()}, {"E", ema_e_.updates()}}},
                    {"config_hash", config_hash(Json(cfg_))}};
  add_params(a, "model/", model_.all_params());
  add_params(a, "ema/", ema_.mapping_params());
  add_params(a, "ema/", ema_.generator_params());
  add_params(a, "ema/", ema_.encoder_params());
  add_adam(a, "F", adam_f_);
  add_adam(a, "G", adam_g_);
  add_adam(a, "E", adam_e_);
  add_adam(a, "D", adam_d_);
  return a;
}

void Trainer::save(const std::filesystem::path& path) const { save_archive(path, to_archive()); }

void Trainer::restore(const Archive& a) {
  try {
    const Json& m = a.metadata;
    read_params(a, "model/", model_.all_params());
    read_params(a, "ema/", ema_.mapping_params());
    read_params(a, "ema/", ema_.generator_params());
    read_params(a, "ema/", ema_.encoder_params());
    read_adam(a, "F", adam_f_);
    read_adam(a, "G", adam_g_);
    read_adam(a, "E", adam_e_);
    read_adam(a, "D", adam_d_);
    step_ = m.at("step").get<long>();
    rng_.set_state(m.at("rng").get<std::string>());
    batcher_.set_position(m.at("batcher_position").get<std::int64_t>());
    adam_f_.set_steps(m.at("adam_steps").at("F").get<long>());
    adam_g_.set_steps(m.at("adam_steps").at("G").get<long>());
    adam_e_.set_steps(m.at("adam_steps").at("E").get<long>());
    adam_d_.set_steps(m.at("adam_steps").at("D").get<long>());
    ema_f_.set_updates(m.at("ema_updates").at("F").get<long>());
    ema_g_.set_updates(m.at("ema_updates").at("G").get<long>());
    ema_e_.set_updates(m.at("ema_updates").at("E").get<long>());
  } catch (const Json::exception& e) {
    throw IoError(std::string("checkpoint: bad metadata: ") + e.what());
  }
}

Trainer Trainer::resume(const std::filesystem::path& ckpt) {
  const Archive a = load_archive(ckpt);
  Trainer t(config_of(a));
  t.restore(a);
  return t;
}

Trainer Trainer::resume(const std::filesystem::path& ckpt, std::shared_ptr<const ImageSource> data) {
  const Archive a = load_archive(ckpt);
  Trainer t(config_of(a), std::move(data));
  t.restore(a);
  return t;
}

SpatialGan<float> model_from_archive(const Archive& a, bool use_ema) {
  const TrainConfig cfg = config_of(a);
  SpatialGan<float> m(cfg.network, cfg.seed);
  const std::string fge = use_ema ? "ema/" : "model/";
  read_params(a, fge, m.mapping_params());
  read_params(a, fge, m.generator_params());
  read_params(a, fge, m.encoder_params());
  read_params(a, "model/", m.discriminator_params());
  return m;
}

SpatialGan<float> load_model(const std::filesystem::path& ckpt, bool use_ema) {
  return model_from_archive(load_archive(ckpt), use_ema);
}

}  // namespace sgan
