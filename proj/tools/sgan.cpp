// Command-line front end: training, evaluation, editing and serving.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sgan/autograd.hpp"
#include "sgan/checkpoint.hpp"
#include "sgan/editor.hpp"
#include "sgan/error.hpp"
#include "sgan/metrics.hpp"
#include "sgan/service.hpp"
#include "sgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace sgan;

namespace {

struct Common {
  std::string ckpt;
  bool live = false;
};

void add_model_opts(CLI::App* cmd, Common& c) {
  cmd->add_option("--ckpt", c.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  cmd->add_flag("--live", c.live, "use the live weights instead of the EMA shadows");
}

Json train_metadata(const std::string& ckpt) { return load_archive(ckpt).metadata; }

// ---- train

struct TrainArgs {
  std::string config, out, resume;
  long steps = -1;
};

int cmd_train(const TrainArgs& a) {
  fs::create_directories(a.out);
  Trainer t = [&] {
    if (!a.resume.empty()) return Trainer::resume(a.resume);
    TrainConfig cfg;
    if (!a.config.empty()) cfg = load_train_config(a.config);
    if (a.steps >= 0) cfg.total_steps = a.steps;
    cfg.validate();
    return Trainer(cfg);
  }();
  const long until = a.steps >= 0 ? a.steps : t.config().total_steps;
  {
    std::ofstream cfg_out(fs::path(a.out) / "config.json");
    cfg_out << Json(t.config()).dump(2) << "\n";
  }
  std::ofstream log(fs::path(a.out) / "train.ndjson", std::ios::app);
  const long every = t.config().checkpoint_every;
  std::cerr << "training " << to_string(t.config().mode) << " from step " << t.step() << " to " << until << "\n";
  try {
    t.run(until, &log, [&](long s, const LossBundle&) {
      const long done = s + 1;
      if (every > 0 && done % every == 0 && done != until) {
        std::ostringstream name;
        name << "step_" << done << ".ckpt";
        t.save(fs::path(a.out) / name.str());
      }
      if (done % 100 == 0) std::cerr << "step " << done << "\n";
    });
  } catch (const TrainingDiverged& e) {
    log << e.record() << "\n";
    std::cerr << "error: " << e.what() << "\n" << e.record() << "\n";
    return 3;
  }
  t.save(fs::path(a.out) / "final.ckpt");
  std::cerr << "wrote " << (fs::path(a.out) / "final.ckpt").string() << "\n";
  return 0;
}

// ---- eval

struct EvalArgs {
  Common m;
  std::string dataset, metrics = "fid,fidlerp,recon,editmse", report, semantic = "blob";
  std::uint64_t seed = 0;
  int fid_samples = 512, recon_samples = 256, edit_samples = 64;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_eval(const EvalArgs& a) {
  const Json meta = train_metadata(a.m.ckpt);
  const TrainConfig cfg = meta.at("train").get<TrainConfig>();
  const SpatialGan<float> model = load_model(a.m.ckpt, !a.m.live);
  const std::string ds = a.dataset.empty() ? cfg.dataset : a.dataset;
  const int size = model.config().image_size;
  const auto train = open_dataset(ds, Split::kTrain, size, cfg.data_seed);
  const auto test = open_dataset(ds, Split::kTest, size, cfg.data_seed);
  EvalOptions opt;
  opt.metrics = split_list(a.metrics);
  opt.seed = a.seed;
  opt.fid_samples = a.fid_samples;
  opt.recon_samples = a.recon_samples;
  opt.edit_samples = a.edit_samples;
  opt.semantic = a.semantic;
  Json report = evaluate(model, *train, *test, opt, meta.value("config_hash", ""));
  report["checkpoint"] = a.m.ckpt;
  report["dataset"] = ds;
  report["step"] = meta.value("step", 0L);
  if (a.report.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::ofstream(a.report) << report.dump(2) << "\n";
  }
  return 0;
}

// ---- editing

struct EditArgs {
  Common m;
  std::string original, reference, mask, out, space = "wplus", regions, levels, direction, directions;
  float t = 0.5f;
  double strength = 1.0;
};

int size_of(const Common& m, SpatialGan<float>& model) {
  model = load_model(m.ckpt, !m.live);
  return model.config().image_size;
}

int cmd_edit(const EditArgs& a) {
  SpatialGan<float> model;
  const int s = size_of(a.m, model);
  const Editor ed(model);
  const Tensor<float> out = ed.local_edit(load_image(a.original, s), load_image(a.reference, s), load_mask(a.mask, s),
                                          blend_space_from_string(a.space));
  save_image(a.out, out);
  return 0;
}

std::vector<TransplantRegion> parse_regions(const std::string& text) {
  // "top,left,height,width:top,left,height,width" pairs separated by ';'
  std::vector<TransplantRegion> out;
  auto box = [](const std::string& s) {
    const auto v = split_list(s);
    if (v.size() != 4) throw ConfigError("box needs top,left,height,width: '" + s + "'");
    return Box{std::stoi(v[0]), std::stoi(v[1]), std::stoi(v[2]), std::stoi(v[3])};
  };
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ';');) {
    const size_t colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("region needs src:dst: '" + item + "'");
    out.push_back({box(item.substr(0, colon)), box(item.substr(colon + 1))});
  }
  return out;
}

int cmd_transplant(const EditArgs& a) {
  SpatialGan<float> model;
  const int s = size_of(a.m, model);
  const Editor ed(model);
  save_image(a.out, ed.transplant(load_image(a.original, s), load_image(a.reference, s), parse_regions(a.regions)));
  return 0;
}

int cmd_mix(const EditArgs& a) {
  SpatialGan<float> model;
  const int s = size_of(a.m, model);
  const Editor ed(model);
  std::set<int> levels;
  for (const auto& l : split_list(a.levels)) levels.insert(std::stoi(l));
  Tensor<float> mask;
  if (!a.mask.empty()) mask = load_mask(a.mask, s);
  save_image(a.out, ed.style_mix(load_image(a.original, s), load_image(a.reference, s), levels,
                                 a.mask.empty() ? nullptr : &mask));
  return 0;
}

int cmd_interp(const EditArgs& a) {
  if (a.t < 0 || a.t > 1) throw ConfigError("--t must lie in [0, 1]");
  SpatialGan<float> model;
  const int s = size_of(a.m, model);
  const Editor ed(model);
  save_image(a.out, ed.interpolate(load_image(a.original, s), load_image(a.reference, s), a.t));
  return 0;
}

int cmd_semantic(const EditArgs& a) {
  SpatialGan<float> model;
  const int s = size_of(a.m, model);
  const auto dirs = load_directions(a.directions);
  const auto it = dirs.find(a.direction);
  if (it == dirs.end()) throw NotFoundError("no direction '" + a.direction + "' in " + a.directions);
  const Editor ed(model);
  Tensor<float> region;
  if (!a.mask.empty()) region = load_mask(a.mask, s);
  save_image(a.out, ed.semantic_edit(load_image(a.original, s), it->second, a.strength,
                                     a.mask.empty() ? nullptr : &region));
  return 0;
}

// ---- fit-direction

struct FitArgs {
  Common m;
  std::string positive, negative, name, out;
  double l2 = 1e-3;
  int samples = 10000;
};

std::vector<fs::path> pngs_in(const std::string& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw NotFoundError("no PNG files in " + dir);
  return out;
}

int cmd_fit(const FitArgs& a) {
  SpatialGan<float> model;
  const int s = size_of(a.m, model);
  const Editor ed(model);
  std::vector<Tensor<float>> maps;
  std::vector<int> labels;
  for (int label : {1, 0})
    for (const auto& p : pngs_in(label ? a.positive : a.negative)) {
      maps.push_back(ed.project(load_image(p, s)));
      labels.push_back(label);
    }
  const NetworkConfig& c = model.config();
  Tensor<float> stack(Shape{static_cast<int>(maps.size()), c.stylemap_channels, c.stylemap_hw, c.stylemap_hw});
  for (size_t i = 0; i < maps.size(); ++i)
    std::copy(maps[i].ptr(), maps[i].ptr() + maps[i].numel(), stack.ptr() + i * maps[i].numel());
  SemanticDirection d = calibrate_direction(model, fit_semantic_direction(stack, labels, a.l2), a.samples);
  std::map<std::string, SemanticDirection> dirs;
  if (fs::exists(a.out)) dirs = load_directions(a.out);
  dirs[a.name] = d;
  std::ofstream(a.out) << directions_to_json(dirs).dump() << "\n";
  std::cerr << "direction '" << a.name << "' sigma " << d.sigma << " from " << labels.size() << " images\n";
  return 0;
}

// ---- generate

struct GenArgs {
  Common m;
  std::string out;
  int count = 16;
  std::uint64_t seed = 0;
  float psi = 1.f;
};

int cmd_generate(const GenArgs& a) {
  SpatialGan<float> model;
  size_of(a.m, model);
  fs::create_directories(a.out);
  Rng rng(a.seed);
  const Editor ed(model);
  const Tensor<float> w_mean = a.psi != 1.f ? estimate_mean_stylemap(model, 4096, a.seed ^ 0x77) : Tensor<float>();
  for (int i = 0; i < a.count; ++i) {
    Tensor<float> w;
    {
      ag::NoGradGuard off;
      w = model.map(Var<float>(rng.normal_tensor<float>(Shape{1, model.config().latent_dim}))).value();
    }
    if (a.psi != 1.f) w = truncate(w, a.psi, w_mean);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04d.png", i);
    save_image(fs::path(a.out) / name, ed.generate(w));
  }
  return 0;
}

// ---- serve

struct ServeArgs {
  Common m;
  std::string host = "127.0.0.1", directions;
  int port = 8080;
  ServiceConfig svc;
};

EditService* g_service = nullptr;

int cmd_serve(const ServeArgs& a) {
  SpatialGan<float> model;
  size_of(a.m, model);
  std::map<std::string, SemanticDirection> dirs;
  if (!a.directions.empty()) dirs = load_directions(a.directions);
  EditService svc(std::move(model), std::move(dirs), a.svc, fs::path(a.m.ckpt).filename().string());
  g_service = &svc;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::cerr << "listening on http://" << a.host << ":" << a.port << "\n";
  if (!svc.listen(a.host, a.port)) {
    std::cerr << "error: cannot listen on " << a.host << ":" << a.port << "\n";
    return 1;
  }
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-latent GAN: train, evaluate, edit, serve"};
  app.require_subcommand(1);
  std::function<int()> run;

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train from scratch or resume");
  train->add_option("--config", ta.config, "training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--resume", ta.resume, "checkpoint to resume from")->check(CLI::ExistingFile)->excludes("--config");
  train->add_option("--steps", ta.steps, "stop at this step (default: total_steps)");
  train->callback([&] { run = [&] { return cmd_train(ta); }; });

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "compute metrics and write a JSON report");
  add_model_opts(eval, ea.m);
  eval->add_option("--dataset", ea.dataset, "toy[:count] or a directory (default: the training dataset)");
  eval->add_option("--metrics", ea.metrics, "comma-separated subset of fid,fidlerp,recon,editmse");
  eval->add_option("--seed", ea.seed);
  eval->add_option("--report", ea.report, "output file (default: stdout)");
  eval->add_option("--fid-samples", ea.fid_samples)->check(CLI::PositiveNumber);
  eval->add_option("--recon-samples", ea.recon_samples)->check(CLI::PositiveNumber);
  eval->add_option("--edit-samples", ea.edit_samples)->check(CLI::PositiveNumber);
  eval->add_option("--semantic", ea.semantic, "mask name for the edit metric");
  eval->callback([&] { run = [&] { return cmd_eval(ea); }; });

  EditArgs xa;
  auto image_pair = [&](CLI::App* c) {
    add_model_opts(c, xa.m);
    c->add_option("--original", xa.original)->required()->check(CLI::ExistingFile);
    c->add_option("--reference", xa.reference)->required()->check(CLI::ExistingFile);
    c->add_option("--out", xa.out)->required();
  };
  auto* edit = app.add_subcommand("edit", "local edit: reference inside the mask, original outside");
  image_pair(edit);
  edit->add_option("--mask", xa.mask, "grayscale PNG, 255 = reference")->required()->check(CLI::ExistingFile);
  edit->add_option("--space", xa.space, "wplus or w");
  edit->callback([&] { run = [&] { return cmd_edit(xa); }; });

  auto* tp = app.add_subcommand("transplant", "copy stylemap boxes from the reference");
  image_pair(tp);
  tp->add_option("--regions", xa.regions, "'t,l,h,w:t,l,h,w;...' src:dst in stylemap cells")->required();
  tp->callback([&] { run = [&] { return cmd_transplant(xa); }; });

  auto* mix = app.add_subcommand("mix", "take selected pyramid levels from the reference");
  image_pair(mix);
  mix->add_option("--levels", xa.levels, "comma-separated level indices")->required();
  mix->add_option("--mask", xa.mask)->check(CLI::ExistingFile);
  mix->callback([&] { run = [&] { return cmd_mix(xa); }; });

  auto* interp = app.add_subcommand("interp", "interpolate between two images");
  image_pair(interp);
  interp->add_option("--t", xa.t);
  interp->callback([&] { run = [&] { return cmd_interp(xa); }; });

  auto* sem = app.add_subcommand("semantic", "move along a named direction");
  add_model_opts(sem, xa.m);
  sem->add_option("--original", xa.original)->required()->check(CLI::ExistingFile);
  sem->add_option("--out", xa.out)->required();
  sem->add_option("--directions", xa.directions)->required()->check(CLI::ExistingFile);
  sem->add_option("--direction", xa.direction)->required();
  sem->add_option("--strength", xa.strength, "in standard deviations");
  sem->add_option("--region", xa.mask)->check(CLI::ExistingFile);
  sem->callback([&] { run = [&] { return cmd_semantic(xa); }; });

  FitArgs fa;
  auto* fit = app.add_subcommand("fit-direction", "fit a direction from two folders of images");
  add_model_opts(fit, fa.m);
  fit->add_option("--positive", fa.positive)->required()->check(CLI::ExistingDirectory);
  fit->add_option("--negative", fa.negative)->required()->check(CLI::ExistingDirectory);
  fit->add_option("--name", fa.name)->required();
  fit->add_option("--out", fa.out, "directions JSON, updated in place")->required();
  fit->add_option("--l2", fa.l2);
  fit->add_option("--samples", fa.samples, "latents used to measure sigma")->check(CLI::PositiveNumber);
  fit->callback([&] { run = [&] { return cmd_fit(fa); }; });

  GenArgs ga;
  auto* gen = app.add_subcommand("generate", "sample random images");
  add_model_opts(gen, ga.m);
  gen->add_option("--out", ga.out, "output directory")->required();
  gen->add_option("--count", ga.count)->check(CLI::PositiveNumber);
  gen->add_option("--seed", ga.seed);
  gen->add_option("--psi", ga.psi, "truncation");
  gen->callback([&] { run = [&] { return cmd_generate(ga); }; });

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "HTTP editing service");
  add_model_opts(serve, sa.m);
  serve->add_option("--host", sa.host);
  serve->add_option("--port", sa.port)->check(CLI::Range(1, 65535));
  serve->add_option("--directions", sa.directions)->check(CLI::ExistingFile);
  serve->add_option("--max-body", sa.svc.max_body_bytes);
  serve->add_option("--sessions", sa.svc.session_capacity)->check(CLI::PositiveNumber);
  serve->callback([&] { run = [&] { return cmd_serve(sa); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    return run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
