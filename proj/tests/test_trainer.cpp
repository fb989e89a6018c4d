#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sgan/error.hpp"
#include "sgan/trainer.hpp"
#include "support/tiny.hpp"

using namespace sgan;
using namespace sgan::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sgan_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_train(std::uint64_t seed = 3) {
  TrainConfig c;
  c.network = tiny_config();
  c.batch_size = 2;
  c.total_steps = 8;
  c.seed = seed;
  c.r1_interval = 4;
  c.dataset = "toy:8";
  return c;
}

std::shared_ptr<const ImageSource> tiny_data() { return std::make_shared<ToyDataset>(5, 8, 8); }

ParamList<float> one_param(float shadow_value, float live_value, ParamList<float>* live) {
  ParamList<float> s{{"p", Var<float>(Tensor<float>(Shape{3}, shadow_value))}};
  *live = {{"p", Var<float>(Tensor<float>(Shape{3}, live_value))}};
  return s;
}

ParamList<float> snapshot(const ParamList<float>& ps) {
  ParamList<float> out;
  for (const auto& p : ps) out.push_back({p.name, Var<float>(p.var.value())});
  return out;
}

double max_abs_delta(const ParamList<float>& before, const ParamList<float>& after) {
  double m = 0;
  for (size_t k = 0; k < before.size(); ++k)
    m = std::max(m, static_cast<double>(max_abs_diff(before[k].var.value(), after[k].var.value())));
  return m;
}

bool same_bundle(const LossBundle& a, const LossBundle& b) {
  const auto x = a.items(), y = b.items();
  for (size_t i = 0; i < x.size(); ++i)
    if (std::memcmp(&x[i].second, &y[i].second, sizeof(double)) != 0) return false;
  return true;
}

}  // namespace

TEST_CASE("EMA update examples") {
  ParamList<float> live;
  ParamList<float> shadow = one_param(0.f, 2.f, &live);
  ema_update(shadow, live, 0.5);
  CHECK(shadow[0].var.value()[0] == 1.f);

  shadow = one_param(0.3f, 2.7f, &live);
  ema_update(shadow, live, 0.0);
  CHECK(bit_equal(shadow[0].var.value(), live[0].var.value()));

  shadow = one_param(0.3f, 2.7f, &live);
  ema_update(shadow, live, 1.0);
  CHECK(shadow[0].var.value()[0] == 0.3f);

  CHECK_THROWS_AS(ema_update(shadow, live, 1.5), ConfigError);
}

TEST_CASE("EMA converges monotonically toward a constant live value") {
  ParamList<float> live;
  const ParamList<float> shadow = one_param(-1.f, 1.f, &live);
  EmaState ema(shadow, live, 0.9, /*warmup=*/false);
  double prev = 2;
  for (int i = 0; i < 100; ++i) {
    ema.update();
    const double gap = std::abs(1.0 - ema.shadow()[0].var.value()[0]);
    CHECK(gap <= prev);
    prev = gap;
  }
  CHECK(prev < 1e-4);
}

TEST_CASE("EMA warmup starts as a running mean") {
  ParamList<float> live;
  const ParamList<float> shadow = one_param(5.f, 1.f, &live);
  EmaState ema(shadow, live, 0.999);
  CHECK(ema.decay_for(0) == 0.0);
  CHECK(ema.decay_for(1) == 0.5);
  CHECK(ema.decay_for(5000) == 0.999);
  ema.update();
  CHECK(ema.shadow()[0].var.value()[0] == 1.f);
  // Two live values 1 then 3 average to 2.
  Var<float> lv = live[0].var;
  lv.mutable_value().fill(3.f);
  ema.update();
  CHECK(ema.shadow()[0].var.value()[0] == doctest::Approx(2.0));
  EmaState plain(shadow, live, 0.999, false);
  CHECK(plain.decay_for(0) == 0.999);
}

TEST_CASE("Adam matches a hand-computed trajectory") {
  ParamList<float> ps{{"p", Var<float>(Tensor<float>(Shape{2}, std::vector<float>{1.f, -2.f}))}};
  Adam adam({{ps, 0.1}}, 0.5, 0.9, 1e-8);
  const std::vector<std::vector<float>> grads{{0.4f, -1.f}, {-0.2f, 3.f}};
  double p[2] = {1, -2}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 2; ++t) {
    adam.step({Var<float>(Tensor<float>(Shape{2}, grads[static_cast<size_t>(t - 1)]))});
    for (int i = 0; i < 2; ++i) {
      const double g = grads[static_cast<size_t>(t - 1)][static_cast<size_t>(i)];
      m[i] = 0.5 * m[i] + 0.5 * g;
      v[i] = 0.9 * v[i] + 0.1 * g * g;
      p[i] -= 0.1 * (m[i] / (1 - std::pow(0.5, t))) / (std::sqrt(v[i] / (1 - std::pow(0.9, t))) + 1e-8);
      CHECK(ps[0].var.value()[i] == doctest::Approx(p[i]).epsilon(1e-6));
    }
  }
  CHECK(adam.steps() == 2);
  CHECK_THROWS_AS(adam.step({}), ShapeError);
  CHECK_THROWS_AS(Adam({{ps, -1.0}}, 0.0, 0.99), ConfigError);
}

TEST_CASE("augment flips with the configured probability") {
  Tensor<float> x(Shape{3, 2, 2, 3});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(i);
  Rng a(1), b(1);
  CHECK(augment(x, 0.0, a).storage() == x.storage());
  const Tensor<float> f = augment(x, 1.0, b);
  CHECK(a.state() == b.state());
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 2; ++c)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 3; ++w) CHECK(f.at(n, c, h, w) == x.at(n, c, h, 2 - w));
  Rng r(9);
  int flipped = 0;
  Tensor<float> big(Shape{400, 1, 1, 2});
  for (int n = 0; n < 400; ++n) big.at(n, 0, 0, 1) = 1.f;
  const Tensor<float> g = augment(big, 0.5, r);
  for (int n = 0; n < 400; ++n) flipped += g.at(n, 0, 0, 0) == 1.f;
  CHECK(flipped > 160);
  CHECK(flipped < 240);
}

TEST_CASE("train config JSON round-trip and validation") {
  TrainConfig c = tiny_train();
  c.mode = TrainMode::kSequential;
  c.weights.perceptual = 0.5;
  const Json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(Json(back) == j);
  CHECK(config_hash(Json(back)) == config_hash(j));
  Json k = j;
  k["lr"] = 0.001;
  CHECK(config_hash(k) != config_hash(j));

  Json bad = j;
  bad["learning_rate"] = 1;
  CHECK_THROWS_AS(bad.get<TrainConfig>(), ConfigError);
  bad = j;
  bad["network"]["chanels"] = 1;
  CHECK_THROWS_AS(bad.get<TrainConfig>(), ConfigError);
  bad = j;
  bad["mode"] = "parallel";
  CHECK_THROWS_AS(bad.get<TrainConfig>(), ConfigError);

  TrainConfig v = tiny_train();
  v.batch_size = 3;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = tiny_train();
  v.r1_interval = 0;
  CHECK_THROWS_AS(v.validate(), ConfigError);

  const fs::path dir = scratch_dir("config");
  {
    std::ofstream(dir / "c.json") << R"({"lr": 0.01, "network": {"image_size": 16, "channels": {"4": 8, "8": 8, "16": 4}}})";
  }
  const TrainConfig loaded = load_train_config(dir / "c.json");
  CHECK(loaded.lr == 0.01);
  CHECK(loaded.network.image_size == 16);
  CHECK(loaded.network.channels.at(16) == 4);
  CHECK(loaded.beta2 == 0.99);
  CHECK_THROWS_AS(load_train_config(dir / "missing.json"), NotFoundError);
}

TEST_CASE("defaults follow the training recipe") {
  const TrainConfig c;
  CHECK(c.lr == 0.002);
  CHECK(c.beta1 == 0.0);
  CHECK(c.beta2 == 0.99);
  CHECK(c.mapping_lr_multiplier == 0.01);
  CHECK(c.r1_gamma == 10.0);
  CHECK(c.r1_interval == 16);
  CHECK(c.ema_decay == 0.999);
  CHECK(c.hflip_prob == 0.5);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TrainConfig c = tiny_train();
  c.lr = 0;
  Trainer t(c, tiny_data());
  const ParamList<float> before = snapshot(t.model().all_params());
  for (int i = 0; i < 4; ++i) t.next();
  CHECK(t.step() == 4);
  CHECK(params_equal(before, t.model().all_params()));
}

TEST_CASE("mapping network learns at a hundredth of the base rate") {
  Trainer t(tiny_train(), tiny_data());
  const ParamList<float> f0 = snapshot(t.model().mapping_params());
  const ParamList<float> g0 = snapshot(t.model().generator_params());
  t.next();
  // First Adam step moves every entry by lr * g / (|g| + eps), i.e. almost exactly lr.
  const double df = max_abs_delta(f0, t.model().mapping_params());
  const double dg = max_abs_delta(g0, t.model().generator_params());
  CHECK(dg == doctest::Approx(0.002).epsilon(1e-3));
  CHECK(df / dg == doctest::Approx(0.01).epsilon(1e-3));
}

TEST_CASE("loss routing between D and F/G/E") {
  auto only = [](auto set) {
    TrainConfig c = tiny_train();
    c.weights = LossWeights{0, 0, 0, 0, 0, 0, 0};
    c.r1_gamma = 0;
    set(c.weights);
    return c;
  };
  auto changed = [](const TrainConfig& c) {
    Trainer t(c, tiny_data());
    const SpatialGan<float>& m = t.model();
    const auto f = snapshot(m.mapping_params()), g = snapshot(m.generator_params()),
               e = snapshot(m.encoder_params()), d = snapshot(m.discriminator_params());
    t.next();
    return std::array<bool, 4>{!params_equal(f, m.mapping_params()), !params_equal(g, m.generator_params()),
                               !params_equal(e, m.encoder_params()), !params_equal(d, m.discriminator_params())};
  };
  using A = std::array<bool, 4>;  // F, G, E, D
  CHECK(changed(only([](LossWeights& w) { w.adv_d = 1; })) == A{false, false, false, true});
  CHECK(changed(only([](LossWeights& w) { w.domain_guided_d = 1; })) == A{false, false, false, true});
  CHECK(changed(only([](LossWeights& w) { w.adv_g = 1; })) == A{true, true, false, false});
  CHECK(changed(only([](LossWeights& w) { w.domain_guided_eg = 1; })) == A{false, true, true, false});
  CHECK(changed(only([](LossWeights& w) { w.latent_recon = 1; })) == A{true, true, true, false});
  CHECK(changed(only([](LossWeights& w) { w.perceptual = 1; })) == A{false, true, true, false});
}

TEST_CASE("R1 runs on every interval-th step") {
  Trainer t(tiny_train(), tiny_data());
  for (int s = 0; s < 8; ++s) {
    const LossBundle b = t.next();
    CHECK(((s + 1) % 4 == 0) == (b.r1 > 0));
  }
}

TEST_CASE("same seed gives the same loss trajectory") {
  Trainer a(tiny_train(11), tiny_data()), b(tiny_train(11), tiny_data()), c(tiny_train(12), tiny_data());
  bool differs = false;
  for (int s = 0; s < 5; ++s) {
    const LossBundle la = a.next(), lb = b.next(), lc = c.next();
    CHECK(same_bundle(la, lb));
    differs = differs || !same_bundle(la, lc);
  }
  CHECK(differs);
  CHECK(params_equal(a.model().all_params(), b.model().all_params()));
}

TEST_CASE("sequential mode freezes the generator while the encoder trains") {
  TrainConfig c = tiny_train();
  c.mode = TrainMode::kSequential;
  c.total_steps = 6;
  Trainer t(c, tiny_data());
  const auto e0 = snapshot(t.model().encoder_params());
  for (int s = 0; s < 3; ++s) {
    CHECK(t.phase() == 1);
    const LossBundle b = t.next();
    CHECK(b.image_recon == 0);
  }
  CHECK(params_equal(e0, t.model().encoder_params()));
  CHECK(t.phase() == 2);
  const auto f = snapshot(t.model().mapping_params()), g = snapshot(t.model().generator_params()),
             d = snapshot(t.model().discriminator_params()), e = snapshot(t.model().encoder_params());
  const auto g_ema = snapshot(t.ema_model().generator_params());
  for (int s = 0; s < 3; ++s) {
    const LossBundle b = t.next();
    CHECK(b.adv_d == 0);
    CHECK(b.image_recon > 0);
  }
  CHECK(params_equal(f, t.model().mapping_params()));
  CHECK(params_equal(g, t.model().generator_params()));
  CHECK(params_equal(d, t.model().discriminator_params()));
  CHECK(params_equal(g_ema, t.ema_model().generator_params()));
  CHECK_FALSE(params_equal(e, t.model().encoder_params()));
}

TEST_CASE("non-finite losses abort before the update") {
  Trainer t(tiny_train(), tiny_data());
  const auto before = snapshot(t.model().all_params());
  Tensor<float> bad = gather(t.data(), {0, 1});
  bad[5] = std::nanf("");
  try {
    t.train_step(bad);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    const Json rec = Json::parse(e.record());
    CHECK(rec.at("step") == 0);
    CHECK(rec.at("stage") == "discriminator");
    CHECK(rec.at("losses").at("adv_d") == "nan");
  }
  CHECK(params_equal(before, t.model().all_params()));
  CHECK(t.step() == 0);
}

TEST_CASE("NDJSON log records") {
  Trainer t(tiny_train(), tiny_data());
  std::ostringstream log;
  t.run(3, &log);
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  std::set<long> steps;
  while (std::getline(in, line)) {
    const Json j = Json::parse(line);
    CHECK(j.size() == 3);
    CHECK(j.at("name").is_string());
    CHECK(j.at("value").is_number());
    steps.insert(j.at("step").get<long>());
    ++lines;
  }
  CHECK(lines == 2 * static_cast<int>(LossBundle{}.items().size()));
  CHECK(steps == std::set<long>{0, 2});
}

TEST_CASE("checkpoint save, load, save is bit-exact") {
  const fs::path dir = scratch_dir("ckpt");
  Trainer t(tiny_train(), tiny_data());
  t.run(3);
  t.save(dir / "a.ckpt");
  const Bytes first = read_file(dir / "a.ckpt");
  Trainer r = Trainer::resume(dir / "a.ckpt", tiny_data());
  r.save(dir / "b.ckpt");
  CHECK(read_file(dir / "b.ckpt") == first);
  CHECK(encode_archive(decode_archive(first)) == first);
  CHECK(r.step() == 3);

  CHECK_THROWS_AS(Trainer::resume(dir / "missing.ckpt", tiny_data()), NotFoundError);
  Bytes corrupt = first;
  corrupt[corrupt.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_archive(corrupt), IoError);
  CHECK_THROWS_AS(decode_archive(Bytes(first.begin(), first.begin() + 40)), IoError);

  const SpatialGan<float> ema = load_model(dir / "a.ckpt");
  const SpatialGan<float> live = load_model(dir / "a.ckpt", false);
  CHECK(params_equal(ema.generator_params(), t.ema_model().generator_params()));
  CHECK(params_equal(live.generator_params(), t.model().generator_params()));
  CHECK(params_equal(ema.discriminator_params(), t.model().discriminator_params()));
}

TEST_CASE("resumed training continues bit-identically") {
  for (TrainMode mode : {TrainMode::kJoint, TrainMode::kSequential}) {
    CAPTURE(to_string(mode));
    TrainConfig c = tiny_train();
    c.mode = mode;
    c.total_steps = 8;
    const fs::path dir = scratch_dir("resume_" + to_string(mode));
    Trainer straight(c, tiny_data());
    std::vector<LossBundle> ref;
    straight.run(8, nullptr, [&](long, const LossBundle& b) { ref.push_back(b); });

    Trainer first(c, tiny_data());
    first.run(3);
    first.save(dir / "s3.ckpt");
    Trainer second = Trainer::resume(dir / "s3.ckpt", tiny_data());
    std::vector<LossBundle> rest;
    second.run(8, nullptr, [&](long, const LossBundle& b) { rest.push_back(b); });
    REQUIRE(rest.size() == 5);
    for (size_t i = 0; i < rest.size(); ++i) CHECK(same_bundle(rest[i], ref[i + 3]));
    CHECK(params_equal(second.model().all_params(), straight.model().all_params()));
    CHECK(params_equal(second.ema_model().all_params(), straight.ema_model().all_params()));
  }
}
