// ssc: command-line front end.
//
//   ssc gen-data | superpix | train | cam | reconstruct | pseudo | eval | ablate | grad-check
//
// Every subcommand takes --config <file> ("key = value" lines, keys spelled
// like the long flags); flags given on the command line win over the file.
// Exit status: 0 success, 1 usage error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssc/ablation.hpp"
#include "ssc/dataset.hpp"
#include "ssc/gradcheck.hpp"
#include "ssc/manifest.hpp"
#include "ssc/pseudo_eval.hpp"
#include "ssc/superpixel.hpp"
#include "ssc/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssc;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// String-valued options, kept by key so the effective configuration can be
// written to the manifest verbatim.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  void add(const std::string& key, const std::string& def, const std::string& help) {
    auto& slot = values_[key];
    slot = def;
    std::string names = "--" + key;
    const std::string dashed = dash(key);
    if (dashed != key) names += ",--" + dashed;
    app_->add_option(names, slot, help)->default_str(def)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    order_.push_back(key);
  }

  const std::string& get(const std::string& key) const { return values_.at(key); }
  int get_int(const std::string& key) const { return to_int(key, get(key)); }
  double get_double(const std::string& key) const {
    try {
      return std::stod(get(key));
    } catch (const std::logic_error&) {
      throw UsageError("--" + key + ": not a number: '" + get(key) + "'");
    }
  }
  bool get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("--" + key + ": not a boolean: '" + v + "'");
  }
  std::string require(const std::string& key) const {
    if (get(key).empty()) throw UsageError("--" + key + " is required");
    return get(key);
  }
  bool given(const std::string& key) const { return app_->get_option("--" + key)->count() > 0; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  ConfigMap snapshot() const {
    ConfigMap m;
    for (const auto& k : order_) m[k] = values_.at(k);
    return m;
  }
  const std::vector<std::string>& keys() const { return order_; }

  static std::string dash(std::string k) {
    for (auto& c : k)
      if (c == '_') c = '-';
    return k;
  }

 private:
  static int to_int(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const int i = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return i;
    } catch (const std::logic_error&) {
      throw UsageError("--" + key + ": not an integer: '" + v + "'");
    }
  }

  CLI::App* app_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

void add_train_options(Options& o) {
  const TrainConfig d;
  for (const auto& [k, v] : d.to_map()) o.add(k, v, "training: " + k);
}

TrainConfig train_config_from(const Options& o) {
  ConfigMap m;
  for (const auto& k : TrainConfig::keys()) m[k] = o.get(k);
  return TrainConfig::from_map(m);
}

void write_manifest(const fs::path& dir, const std::string& command, const ConfigMap& config,
                    const std::string& corpus, const std::string& checkpoint, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.corpus_hash = corpus.empty() ? "" : corpus_hash(corpus);
  m.checkpoint = checkpoint;
  m.seed = seed;
  m.write(dir);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::logic_error&) {
      throw UsageError("--seeds: bad seed '" + tok + "'");
    }
  }
  if (out.empty()) throw UsageError("--seeds: empty list");
  return out;
}

Model<float> load_checked(const std::string& path, const Corpus& corpus) {
  auto model = load_model<float>(path);
  if (model.spec.backbone.num_classes != corpus.num_classes()) {
    throw ConfigError("checkpoint " + path + " has " + std::to_string(model.spec.backbone.num_classes) +
                      " classes, corpus has " + std::to_string(corpus.num_classes()));
  }
  return model;
}

std::size_t limit_of(const Options& o, const Corpus& c) {
  const int lim = o.get_int("limit");
  return lim > 0 ? std::min(c.size(), static_cast<std::size_t>(lim)) : c.size();
}

// --- subcommands ------------------------------------------------------------

int cmd_gen_data(const Options& o) {
  SyntheticSpec spec;
  spec.n_images = o.get_int("n");
  spec.n_classes = o.get_int("classes");
  spec.image_size = o.get_int("size");
  spec.seed = static_cast<std::uint64_t>(std::stoull(o.get("seed")));
  const fs::path out = o.require("out");
  generate_synthetic_corpus(out, spec);
  write_manifest(out, "gen-data", o.snapshot(), out.string(), "", spec.seed);
  std::cout << "wrote " << spec.n_images << " images to " << out.string() << "\n";
  return 0;
}

int cmd_superpix(const Options& o) {
  const fs::path root = o.require("corpus");
  const auto corpus = Corpus::open(root);
  const bool force = o.get_bool("force");
  const std::string render = o.get("render");
  std::size_t computed = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto s = corpus.load(i);
    const auto path = superpixel_cache_path(root, s.image.id);
    auto p = SuperpixelParams::defaults_for(s.image.height(), s.image.width());
    if (o.get("k") != "auto") p.k = o.get_double("k");
    p.min_size = o.get_int("min_size");
    p.sigma = o.get_double("sigma");
    p.budget = o.get_int("budget");
    SuperpixelMap sp;
    if (!force && fs::exists(path)) {
      sp = load_superpixels(path);
    } else {
      sp = compute_superpixels(s.image.pixels, p);
      save_superpixels(path, sp);
      ++computed;
    }
    if (!render.empty()) save_image(fs::path(render) / (s.image.id + ".png"), render_boundaries(s.image.pixels, sp));
  }
  write_manifest(root / "superpixels", "superpix", o.snapshot(), root.string(), "", 0);
  if (!render.empty()) write_manifest(render, "superpix", o.snapshot(), root.string(), "", 0);
  std::cout << "superpixels: " << computed << " computed, " << corpus.size() - computed << " cached\n";
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = train_config_from(o);
  const auto result = train(cfg, &std::cout);
  std::cout << "checkpoint: " << result.checkpoint.string() << "\n";
  return 0;
}

int cmd_cam(const Options& o) {
  const auto corpus = Corpus::open(o.require("corpus"));
  const auto ckpt = o.require("checkpoint");
  const auto model = load_checked(ckpt, corpus);
  const fs::path out = o.require("out");
  const bool heat = o.get_bool("heatmaps");
  const bool mod = o.get_bool("modulation_heatmaps");
  ModulationConfig mc{o.get_double("t_obj"), o.get_int("erosion_r"), 2};
  mc.validate();
  fs::create_directories(out);
  const auto n = limit_of(o, corpus);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = corpus.load(i);
    const auto cams = cams_for_image(model, s.image.pixels, s.labels.y);
    save_cams(out / (s.image.id + ".camf"), cams, s.image.height(), s.image.width());
    auto name = [&](int cls) { return corpus.class_names()[static_cast<std::size_t>(cls - 1)]; };
    if (heat)
      for (const auto& c : cams)
        save_image(out / (s.image.id + "_" + name(c.cls) + ".png"), heatmap(s.image.pixels, c.map));
    if (mod) {
      const auto sp_path = superpixel_cache_path(corpus.root(), s.image.id);
      if (!fs::exists(sp_path)) throw ConfigError("no superpixel cache for '" + s.image.id + "'; run superpix first");
      const auto sp = load_superpixels(sp_path);
      ag::Tape<float> tape;
      Binder<float> binder(tape, const_cast<ParamStore<float>&>(model.params), false);
      auto bb = forward_features(tape.constant(s.image.pixels), binder, model.spec.backbone, model.spec.drs_enabled);
      const auto plain = alignment_parts(bb.features, s.labels.y, sp.labels, mc, false,
                                         static_cast<const std::vector<Tensor<float>>*>(nullptr));
      const auto rs = alignment_parts(bb.features, s.labels.y, sp.labels, mc, true,
                                      static_cast<const std::vector<Tensor<float>>*>(nullptr));
      const int h = s.image.height(), w = s.image.width();
      for (std::size_t k = 0; k < cams.size(); ++k) {
        save_image(out / (s.image.id + "_" + name(cams[k].cls) + "_regional.png"),
                   heatmap(s.image.pixels, nn::resize_bilinear(plain.targets[k], h, w)));
        save_image(out / (s.image.id + "_" + name(cams[k].cls) + "_rs.png"),
                   heatmap(s.image.pixels, nn::resize_bilinear(rs.targets[k], h, w)));
      }
    }
  }
  write_manifest(out, "cam", o.snapshot(), corpus.root().string(), ckpt, 0);
  std::cout << "wrote CAMs for " << n << " images to " << out.string() << "\n";
  return 0;
}

int cmd_reconstruct(const Options& o) {
  const auto corpus = Corpus::open(o.require("corpus"));
  const auto ckpt = o.require("checkpoint");
  auto model = load_checked(ckpt, corpus);
  if (!model.spec.decoder) throw ConfigError("checkpoint " + ckpt + " has no decoder");
  LossNetwork<float> net;
  if (!o.get("loss_net_weights").empty()) net.load_weights(o.get("loss_net_weights"));
  const fs::path out = o.require("out");
  fs::create_directories(out);
  const auto n = limit_of(o, corpus);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = corpus.load(i);
    ag::Tape<float> tape;
    Binder<float> binder(tape, model.params, false);
    auto image = tape.constant(s.image.pixels);
    auto bb = forward_features(image, binder, model.spec.backbone, model.spec.drs_enabled);
    auto src = model.spec.cdr_early ? bb.stage_outs[static_cast<std::size_t>(model.spec.early_stage())] : bb.features;
    auto recon = reconstruct(src, binder, *model.spec.decoder);
    const double lp = perceptual_loss(recon, ag::affine(image, 2.0f, -1.0f), net).item();
    total += lp;
    Tensor<float> rgb = recon.value();
    for (auto& v : rgb) v = 0.5f * v + 0.5f;
    save_image(out / (s.image.id + "_input.png"), s.image.pixels);
    save_image(out / (s.image.id + "_recon.png"), rgb);
    std::cout << s.image.id << "\tperceptual " << lp << "\n";
  }
  if (n) std::cout << "mean perceptual loss " << total / static_cast<double>(n) << "\n";
  write_manifest(out, "reconstruct", o.snapshot(), corpus.root().string(), ckpt, 0);
  return 0;
}

int cmd_pseudo(const Options& o) {
  const auto corpus = Corpus::open(o.require("corpus"));
  const auto ckpt = o.require("checkpoint");
  const auto model = load_checked(ckpt, corpus);
  const fs::path out = o.require("out");
  const double t_bg = o.get_double("t_bg");
  fs::create_directories(out);
  const auto n = limit_of(o, corpus);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = corpus.load(i);
    const auto cams = cams_for_image(model, s.image.pixels, s.labels.y);
    save_mask(out / (s.image.id + ".png"), pseudo_mask(cams, s.image.height(), s.image.width(), t_bg));
  }
  write_manifest(out, "pseudo", o.snapshot(), corpus.root().string(), ckpt, 0);
  std::cout << "wrote " << n << " pseudo masks to " << out.string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const auto corpus = Corpus::open(o.require("corpus"));
  const std::string pred = o.get("pred"), ckpt = o.get("checkpoint");
  if (pred.empty() == ckpt.empty()) throw UsageError("eval needs exactly one of --pred or --checkpoint");
  IoUTable table(corpus.num_classes());
  if (!ckpt.empty()) {
    table = evaluate_pseudo_masks(load_checked(ckpt, corpus), corpus, o.get_double("t_bg"));
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto s = corpus.load(i);
      if (!s.mask) throw IoError("no ground-truth mask for '" + s.image.id + "'");
      const auto p = fs::path(pred) / (s.image.id + ".png");
      if (!fs::exists(p)) throw IoError("no predicted mask for '" + s.image.id + "': " + p.string());
      table.add(load_mask(p), *s.mask, s.image.id);
    }
  }
  std::cout << format_iou_table(table, corpus.class_names());
  if (!o.get("out").empty()) {
    const fs::path out = o.get("out");
    fs::create_directories(out);
    std::ofstream(out / "eval.tsv") << format_iou_tsv(table, corpus.class_names());
    write_manifest(out, "eval", o.snapshot(), corpus.root().string(), ckpt, 0);
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  AblationOptions opt;
  opt.base = train_config_from(o);
  opt.eval_corpus = o.get("eval_corpus");
  opt.seeds = parse_seeds(o.get("seeds"));
  opt.jobs = o.get_int("jobs");
  opt.loss_ablation = o.get_bool("loss_ablation");
  opt.t_bg = o.get_double("t_bg");
  if (o.get_bool("smoke")) {
    opt.seeds.resize(1);
    if (!o.given("epochs")) opt.base.epochs = 1;
  }
  const auto rows = run_ablation(opt, &std::cerr);
  std::cout << format_ablation_table(rows, opt.seeds.size());
  return 0;
}

int cmd_grad_check(const Options& o) {
  GradCheckOptions gopt;
  gopt.seed = static_cast<std::uint64_t>(std::stoull(o.get("seed")));
  const std::string prec = o.get("precision");
  if (prec != "float32" && prec != "float64" && prec != "both") throw UsageError("--precision: float32, float64 or both");
  bool ok = true;
  std::ostringstream report;
  auto show = [&](const GradCheckReport& r, double tol) {
    report << r.precision << " (" << r.num_params << " parameters, " << r.probes.size() << " probes)\n";
    for (const char* l : {"toy", "cls", "p", "a"}) {
      const double e = r.max_rel(l);
      const bool pass = e < tol;
      ok = ok && pass;
      report << "  " << std::left << std::setw(5) << l << " max rel err " << std::scientific << std::setprecision(3) << e
             << (pass ? "  ok" : "  FAIL") << "  (tol " << tol << ")\n";
    }
  };
  if (prec != "float32") show(grad_check<double>(gopt), 1e-6);
  if (prec != "float64") show(grad_check<float>(gopt), 1e-3);
  std::cout << report.str();
  if (!o.get("out").empty()) {
    fs::create_directories(o.get("out"));
    std::ofstream(fs::path(o.get("out")) / "grad_check.txt") << report.str();
    write_manifest(o.get("out"), "grad-check", o.snapshot(), "", "", gopt.seed);
  }
  return ok ? 0 : 2;
}

// Splices "--key value" pairs from the --config file in front of the
// command-line flags, so explicit flags (parsed later) take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
  if (args.size() < 2) return args;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::vector<std::string> out{args[0], args[1]};
  for (const auto& [k, v] : read_config_file(path)) {
    if (k == "config" || !sub->get_option_no_throw("--" + k)) throw UsageError(path + ": unknown key '" + k + "' for " + args[1]);
    out.push_back("--" + k);
    out.push_back(v);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial structure constraints for weakly supervised segmentation"};
  app.require_subcommand(1);
  std::map<std::string, Options> opts;
  std::map<std::string, int (*)(const Options&)> handlers;
  auto sub = [&](const std::string& name, const std::string& help, int (*fn)(const Options&)) -> Options& {
    auto* s = app.add_subcommand(name, help);
    std::string config_path;
    s->add_option("--config", config_path, "key = value file; flags override it");
    handlers[name] = fn;
    return opts.emplace(name, Options(s)).first->second;
  };

  auto& gen = sub("gen-data", "generate a synthetic shapes corpus", cmd_gen_data);
  gen.add("out", "", "corpus directory");
  gen.add("n", "100", "number of images");
  gen.add("classes", "3", "number of classes (2..8)");
  gen.add("size", "64", "image side in pixels");
  gen.add("seed", "0", "generator seed");

  auto& sp = sub("superpix", "compute and cache superpixels for a corpus", cmd_superpix);
  sp.add("corpus", "", "corpus directory");
  sp.add("k", "auto", "Felzenszwalb scale (auto: 100 at 512x512, scaled by area)");
  sp.add("min_size", "16", "minimum component size");
  sp.add("sigma", "0.8", "pre-smoothing sigma");
  sp.add("budget", "64", "maximum regions per image");
  sp.add("force", "false", "recompute cached maps");
  sp.add("render", "", "directory for boundary overlays");

  auto& tr = sub("train", "train a model", cmd_train);
  add_train_options(tr);

  auto& cam = sub("cam", "dump class activation maps", cmd_cam);
  cam.add("corpus", "", "corpus directory");
  cam.add("checkpoint", "", "model checkpoint");
  cam.add("out", "", "output directory");
  cam.add("heatmaps", "false", "also write heatmap PNGs");
  cam.add("modulation_heatmaps", "false", "also write regional and reliable-selection target heatmaps");
  cam.add("t_obj", "0.3", "reliable selection threshold");
  cam.add("erosion_r", "8", "erosion kernel size");
  cam.add("limit", "0", "process only the first N images (0 = all)");

  auto& rec = sub("reconstruct", "write reconstructions of corpus images", cmd_reconstruct);
  rec.add("corpus", "", "corpus directory");
  rec.add("checkpoint", "", "model checkpoint");
  rec.add("out", "", "output directory");
  rec.add("limit", "5", "number of images");
  rec.add("loss_net_weights", "", "loss network weights (default: seeded)");

  auto& ps = sub("pseudo", "generate pseudo masks", cmd_pseudo);
  ps.add("corpus", "", "corpus directory");
  ps.add("checkpoint", "", "model checkpoint");
  ps.add("out", "", "output directory");
  ps.add("t_bg", "0.25", "background threshold");
  ps.add("limit", "0", "process only the first N images (0 = all)");

  auto& ev = sub("eval", "score masks against ground truth (mIoU)", cmd_eval);
  ev.add("corpus", "", "corpus with ground-truth masks");
  ev.add("pred", "", "directory of predicted mask PNGs");
  ev.add("checkpoint", "", "evaluate pseudo masks of this checkpoint instead");
  ev.add("t_bg", "0.25", "background threshold (with --checkpoint)");
  ev.add("out", "", "directory for eval.tsv");

  auto& ab = sub("ablate", "component ablation over several seeds", cmd_ablate);
  add_train_options(ab);
  ab.add("eval_corpus", "", "corpus scored for mIoU (default: the training corpus)");
  ab.add("seeds", "0,1,2", "comma-separated seeds");
  ab.add("jobs", "1", "concurrent trainings (capped by SSC_NUM_THREADS)");
  ab.add("loss_ablation", "false", "also compare reconstruction losses");
  ab.add("smoke", "false", "single seed, one epoch unless --epochs is given");
  ab.add("t_bg", "0.25", "background threshold");

  auto& gc = sub("grad-check", "finite-difference gradient check", cmd_grad_check);
  gc.add("precision", "both", "float32, float64 or both");
  gc.add("seed", "7", "problem seed");
  gc.add("out", "", "directory for the report");

  if (argc < 2) {
    std::cerr << app.help();
    return 1;
  }
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(args, app);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return handlers.at(name)(opts.at(name));
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
