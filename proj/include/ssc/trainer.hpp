#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <initializer_list>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ssc/dataset.hpp"
#include "ssc/errors.hpp"
#include "ssc/manifest.hpp"
#include "ssc/model.hpp"
#include "ssc/superpixel.hpp"

namespace ssc {

namespace fs = std::filesystem;

using ConfigMap = std::map<std::string, std::string>;

// "key = value" lines; blank lines and '#' comments are skipped.
inline ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline ConfigMap read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

struct TrainConfig {
  double beta_p = 1.0;
  double beta_a = 1.0;
  // beta_a ramps linearly from 0 over this many epochs so that a from-scratch
  // backbone has positive CAMs before the alignment term sees them.
  int asm_warmup = 0;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 0;
  bool drs_enabled = true;
  bool cdr_enabled = true;
  bool asm_enabled = true;
  bool ras_enabled = true;
  bool cdr_early = false;
  std::string recon_loss = "perceptual";
  double t_obj = 0.3;
  int erosion_r = 8;
  int train_size = 64;
  int decoder_width = 32;
  std::string backbone_widths = "16,32,64,64";
  int max_images = 0;  // 0 = whole corpus
  std::string corpus;
  std::string out;
  std::string loss_net_weights;

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{"beta_p",      "beta_a",        "asm_warmup",  "lr",          "momentum",       "weight_decay",
                                         "epochs",      "batch_size",    "seed",        "drs_enabled",    "cdr_enabled",
                                         "asm_enabled", "ras_enabled",   "cdr_early",   "recon_loss",     "t_obj",
                                         "erosion_r",   "train_size",    "decoder_width", "backbone_widths", "max_images",
                                         "corpus",      "out",           "loss_net_weights"};
    return k;
  }

  static TrainConfig from_map(const ConfigMap& m) {
    TrainConfig c;
    for (const auto& [k, v] : m) {
      if (!keys().count(k)) throw ConfigError("unknown config key '" + k + "'");
      try {
        if (k == "beta_p") c.beta_p = std::stod(v);
        else if (k == "beta_a") c.beta_a = std::stod(v);
        else if (k == "asm_warmup") c.asm_warmup = std::stoi(v);
        else if (k == "lr") c.lr = std::stod(v);
        else if (k == "momentum") c.momentum = std::stod(v);
        else if (k == "weight_decay") c.weight_decay = std::stod(v);
        else if (k == "epochs") c.epochs = std::stoi(v);
        else if (k == "batch_size") c.batch_size = std::stoi(v);
        else if (k == "seed") c.seed = std::stoull(v);
        else if (k == "drs_enabled") c.drs_enabled = parse_bool(k, v);
        else if (k == "cdr_enabled") c.cdr_enabled = parse_bool(k, v);
        else if (k == "asm_enabled") c.asm_enabled = parse_bool(k, v);
        else if (k == "ras_enabled") c.ras_enabled = parse_bool(k, v);
        else if (k == "cdr_early") c.cdr_early = parse_bool(k, v);
        else if (k == "recon_loss") c.recon_loss = v;
        else if (k == "t_obj") c.t_obj = std::stod(v);
        else if (k == "erosion_r") c.erosion_r = std::stoi(v);
        else if (k == "train_size") c.train_size = std::stoi(v);
        else if (k == "decoder_width") c.decoder_width = std::stoi(v);
        else if (k == "backbone_widths") c.backbone_widths = v;
        else if (k == "max_images") c.max_images = std::stoi(v);
        else if (k == "corpus") c.corpus = v;
        else if (k == "out") c.out = v;
        else if (k == "loss_net_weights") c.loss_net_weights = v;
      } catch (const std::logic_error&) {
        throw ConfigError("bad value '" + v + "' for key '" + k + "'");
      }
    }
    c.validate();
    return c;
  }

  ConfigMap to_map() const {
    auto num = [](double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      return os.str();
    };
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return ConfigMap{{"beta_p", num(beta_p)},
                     {"beta_a", num(beta_a)},
                     {"asm_warmup", std::to_string(asm_warmup)},
                     {"lr", num(lr)},
                     {"momentum", num(momentum)},
                     {"weight_decay", num(weight_decay)},
                     {"epochs", std::to_string(epochs)},
                     {"batch_size", std::to_string(batch_size)},
                     {"seed", std::to_string(seed)},
                     {"drs_enabled", b(drs_enabled)},
                     {"cdr_enabled", b(cdr_enabled)},
                     {"asm_enabled", b(asm_enabled)},
                     {"ras_enabled", b(ras_enabled)},
                     {"cdr_early", b(cdr_early)},
                     {"recon_loss", recon_loss},
                     {"t_obj", num(t_obj)},
                     {"erosion_r", std::to_string(erosion_r)},
                     {"train_size", std::to_string(train_size)},
                     {"decoder_width", std::to_string(decoder_width)},
                     {"backbone_widths", backbone_widths},
                     {"max_images", std::to_string(max_images)},
                     {"corpus", corpus},
                     {"out", out},
                     {"loss_net_weights", loss_net_weights}};
  }

  void validate() const {
    if (beta_p < 0 || beta_a < 0) throw ConfigError("betas must be >= 0");
    if (asm_warmup < 0) throw ConfigError("asm_warmup must be >= 0");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (recon_loss != "perceptual" && recon_loss != "l1" && recon_loss != "l2") {
      throw ConfigError("recon_loss must be perceptual, l1 or l2");
    }
    modulation().validate();
    check_image_geometry(train_size, train_size);
    (void)widths();
  }

  std::vector<int> widths() const {
    std::vector<int> w;
    std::istringstream is(backbone_widths);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        w.push_back(std::stoi(tok));
      } catch (const std::logic_error&) {
        throw ConfigError("bad backbone_widths '" + backbone_widths + "'");
      }
    }
    if (w.size() < 2) throw ConfigError("backbone needs at least two stages");
    return w;
  }

  ModulationConfig modulation() const { return ModulationConfig{t_obj, erosion_r, 2}; }

  LossSwitches switches() const {
    LossSwitches s;
    s.cdr = cdr_enabled;
    s.asm_ = asm_enabled;
    s.ras = ras_enabled;
    s.beta_p = beta_p;
    s.beta_a = beta_a;
    s.recon_loss = recon_loss;
    s.modulation = modulation();
    return s;
  }

  ModelSpec model_spec(int num_classes) const {
    ModelSpec spec;
    spec.backbone.widths = widths();
    spec.backbone.num_classes = num_classes;
    spec.drs_enabled = drs_enabled;
    spec.cdr_early = cdr_early;
    if (cdr_enabled) spec.decoder = spec.decoder_for(decoder_width);
    return spec;
  }

 private:
  static bool parse_bool(const std::string& k, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("bad boolean '" + v + "' for key '" + k + "'");
  }
};

struct LossReport {
  double l_cls = 0, l_p = 0, l_a = 0, total = 0;
  long step = 0;
};

// Polynomial decay lr0 * (1 - step / total)^0.9.
inline double lr_schedule(long step, long total_steps, double lr0) {
  if (total_steps < 1 || step < 0 || step >= total_steps) throw ArgumentError("lr_schedule: step out of range");
  return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), 0.9);
}

// Normalisation parameters are exempt from weight decay.
inline bool is_norm_param(const std::string& name) { return name.find(".norm") != std::string::npos; }

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), wd_(weight_decay) {}

  void step(ParamStore<T>& store, double lr) {
    for (auto& e : store.entries()) {
      auto& v = velocity_[e.name];
      if (v.empty()) v = Tensor<T>(e.value.shape(), T(0));
      const T wd = is_norm_param(e.name) ? T(0) : static_cast<T>(wd_);
      const T mom = static_cast<T>(momentum_), rate = static_cast<T>(lr);
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const T g = e.grad[i] + wd * e.value[i];
        v[i] = mom * v[i] + g;
        e.value[i] -= rate * v[i];
      }
    }
  }

 private:
  double momentum_, wd_;
  std::map<std::string, Tensor<T>> velocity_;
};

struct TrainResult {
  std::vector<LossReport> epochs;  // per-epoch means
  fs::path checkpoint;
};

struct TrainingSet {
  std::vector<Tensor<float>> images;
  std::vector<std::vector<int>> labels;
  std::vector<LabelRaster> superpixels;  // empty unless ASM is on
  int num_classes = 0;
};

inline TrainingSet load_training_set(const fs::path& corpus_root, bool need_superpixels, int max_images) {
  const auto corpus = Corpus::open(corpus_root);
  TrainingSet ts;
  ts.num_classes = corpus.num_classes();
  std::size_t n = corpus.size();
  if (max_images > 0) n = std::min(n, static_cast<std::size_t>(max_images));
  if (need_superpixels) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& id = corpus.entries()[i].id;
      if (!fs::exists(superpixel_cache_path(corpus_root, id))) {
        throw ConfigError("ASM enabled but superpixel cache missing for '" + id + "' (run `ssc superpix --corpus " +
                          corpus_root.string() + "` first)");
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto s = corpus.load(i);
    check_image_geometry(s.image.height(), s.image.width());
    if (need_superpixels) {
      auto sp = load_superpixels(superpixel_cache_path(corpus_root, s.image.id));
      if (sp.height() != s.image.height() || sp.width() != s.image.width()) {
        throw ConfigError("superpixel cache for '" + s.image.id + "' does not match the image size");
      }
      ts.superpixels.push_back(std::move(sp.labels));
    }
    ts.images.push_back(std::move(s.image.pixels));
    ts.labels.push_back(std::move(s.labels.y));
  }
  if (ts.images.empty()) throw ConfigError("corpus " + corpus_root.string() + " is empty");
  return ts;
}

inline std::string format_tsv(std::initializer_list<double> values) {
  std::ostringstream os;
  os << std::setprecision(9);
  bool first = true;
  for (double v : values) {
    if (!first) os << '\t';
    os << v;
    first = false;
  }
  return os.str();
}

// Joint SGD of backbone and decoder on L = L_cls + beta_p L_p + beta_a L_a.
// Everything runs on one thread, so a fixed config reproduces bit-for-bit.
inline TrainResult train(const TrainConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  if (cfg.corpus.empty() || cfg.out.empty()) throw ConfigError("train needs corpus and out paths");
  const fs::path out_dir(cfg.out);
  const auto data = load_training_set(cfg.corpus, cfg.asm_enabled, cfg.max_images);
  fs::create_directories(out_dir);

  const ModelSpec spec = cfg.model_spec(data.num_classes);
  Model<float> model = build_model<float>(spec, cfg.seed);
  LossNetwork<float> loss_net;
  if (!cfg.loss_net_weights.empty()) loss_net.load_weights(cfg.loss_net_weights);
  LossSwitches sw = cfg.switches();
  SgdMomentum<float> opt(cfg.momentum, cfg.weight_decay);

  std::mt19937_64 order_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  std::mt19937_64 aug_rng(cfg.seed * 0xbf58476d1ce4e5b9ULL + 2);
  const long n = static_cast<long>(data.images.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;

  std::ofstream step_log(out_dir / "train_log.tsv", std::ios::trunc);
  std::ofstream epoch_log(out_dir / "epoch_log.tsv", std::ios::trunc);
  if (!step_log || !epoch_log) throw IoError("cannot write logs in " + out_dir.string());

  TrainResult result;
  result.checkpoint = out_dir / "checkpoint.ssck";
  std::vector<long> order(static_cast<std::size_t>(n));
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0L);
    for (long i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(uniform_int(order_rng, 0, static_cast<int>(i)))]);
    LossReport epoch_sum;
    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      const long begin = b * cfg.batch_size, end = std::min(n, begin + cfg.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - begin);
      model.params.zero_grad();
      const long ramp = steps_per_epoch * cfg.asm_warmup;
      sw.beta_a = step < ramp ? cfg.beta_a * static_cast<double>(step) / static_cast<double>(ramp) : cfg.beta_a;
      LossReport batch;
      for (long k = begin; k < end; ++k) {
        const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
        const auto& src = data.images[idx];
        const auto draw = draw_augment(aug_rng, src.dim(1), src.dim(2), cfg.train_size);
        const Tensor<float> img = apply_augment(src, draw, cfg.train_size);
        LabelRaster sp;
        if (cfg.asm_enabled) sp = apply_augment(data.superpixels[idx], draw, cfg.train_size);

        ag::Tape<float> tape;
        Binder<float> binder(tape, model.params, true);
        SampleData<float> sd{&img, &data.labels[idx], cfg.asm_enabled ? &sp : nullptr};
        auto terms = sample_losses(tape, binder, spec, &loss_net, sd, sw);
        const std::pair<const char*, float> parts[] = {
            {"l_cls", terms.l_cls.item()}, {"l_p", terms.l_p.item()}, {"l_a", terms.l_a.item()}};
        for (const auto& [name, v] : parts) {
          if (!std::isfinite(v)) {
            throw NumericError("non-finite " + std::string(name) + " at step " + std::to_string(step) + " (image " +
                               std::to_string(idx) + ")");
          }
        }
        tape.backward(terms.total, inv_batch);
        binder.accumulate_grads();
        batch.l_cls += terms.l_cls.item();
        batch.l_p += terms.l_p.item();
        batch.l_a += terms.l_a.item();
      }
      const double cnt = static_cast<double>(end - begin);
      batch.l_cls /= cnt;
      batch.l_p /= cnt;
      batch.l_a /= cnt;
      batch.total = batch.l_cls + cfg.beta_p * batch.l_p + sw.beta_a * batch.l_a;
      batch.step = step;
      const double lr = lr_schedule(step, total_steps, cfg.lr);
      opt.step(model.params, lr);
      step_log << step << '\t' << format_tsv({batch.l_cls, batch.l_p, batch.l_a, batch.total, lr}) << '\n';
      epoch_sum.l_cls += batch.l_cls;
      epoch_sum.l_p += batch.l_p;
      epoch_sum.l_a += batch.l_a;
      epoch_sum.total += batch.total;
    }
    const double spe = static_cast<double>(steps_per_epoch);
    LossReport mean{epoch_sum.l_cls / spe, epoch_sum.l_p / spe, epoch_sum.l_a / spe, epoch_sum.total / spe, step};
    result.epochs.push_back(mean);
    epoch_log << epoch << '\t' << format_tsv({mean.l_cls, mean.l_p, mean.l_a, mean.total}) << '\n';
    epoch_log.flush();
    step_log.flush();
    save_model(result.checkpoint, model);
    if (progress) {
      *progress << "epoch " << epoch << "/" << cfg.epochs << "  l_cls " << mean.l_cls << "  l_p " << mean.l_p
                << "  l_a " << mean.l_a << "  total " << mean.total << std::endl;
    }
  }

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = cfg.to_map();
  manifest.corpus_hash = corpus_hash(cfg.corpus);
  manifest.checkpoint = result.checkpoint.string();
  manifest.seed = cfg.seed;
  manifest.write(out_dir);
  return result;
}

}  // namespace ssc
