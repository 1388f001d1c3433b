#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ssc/manifest.hpp"
#include "ssc/pseudo_eval.hpp"
#include "ssc/trainer.hpp"

namespace ssc {

struct AblationRow {
  std::string name;
  std::string slug;
  TrainConfig config;  // seed and out are filled in per run
};

// Component rows, each adding one element on top of the previous one.
inline std::vector<AblationRow> component_rows(const TrainConfig& base) {
  auto make = [&](const char* name, const char* slug, bool drs, bool cdr, bool asm_, bool ras) {
    AblationRow r{name, slug, base};
    r.config.drs_enabled = drs;
    r.config.cdr_enabled = cdr;
    r.config.asm_enabled = asm_;
    r.config.ras_enabled = ras;
    return r;
  };
  return {make("baseline", "baseline", false, false, false, false),
          make("+DRS", "drs", true, false, false, false),
          make("+DRS+CDR", "drs_cdr", true, true, false, false),
          make("+DRS+CDR+ASM(no RAS)", "drs_cdr_asm_noras", true, true, true, false),
          make("+DRS+CDR+ASM", "drs_cdr_asm", true, true, true, true)};
}

// Reconstruction objective comparison on top of the full model.
inline std::vector<AblationRow> loss_rows(const TrainConfig& base) {
  auto make = [&](const char* name, const char* slug, bool cdr, const char* loss) {
    AblationRow r{name, slug, base};
    r.config.drs_enabled = r.config.asm_enabled = r.config.ras_enabled = true;
    r.config.cdr_enabled = cdr;
    r.config.recon_loss = loss;
    return r;
  };
  return {make("w/o CDR", "no_cdr", false, "perceptual"), make("CDR+L1", "cdr_l1", true, "l1"),
          make("CDR+L2", "cdr_l2", true, "l2"), make("CDR+perceptual", "cdr_perceptual", true, "perceptual")};
}

struct AblationOptions {
  TrainConfig base;
  std::string eval_corpus;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int jobs = 1;
  bool loss_ablation = false;
  double t_bg = 0.25;
};

struct AblationResult {
  std::string name;
  std::vector<double> miou;  // per seed
  double median = 0;
  std::vector<double> seconds;  // wall time of each training + evaluation
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Worker cap: the requested count, further limited by SSC_NUM_THREADS.
inline int effective_jobs(int requested) {
  int jobs = std::max(1, requested);
  if (const char* env = std::getenv("SSC_NUM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) jobs = std::min(jobs, cap);
  }
  return jobs;
}

inline std::string format_ablation_table(const std::vector<AblationResult>& rows, std::size_t num_seeds) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "config" << std::right;
  for (std::size_t s = 0; s < num_seeds; ++s) os << std::setw(10) << ("seed" + std::to_string(s));
  os << std::setw(10) << "median" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(24) << r.name << std::right << std::fixed << std::setprecision(2);
    for (double m : r.miou) os << std::setw(10) << 100.0 * m;
    os << std::setw(10) << 100.0 * r.median << '\n';
  }
  return os.str();
}

// Full precision, so two runs can be compared byte for byte.
inline std::string format_ablation_tsv(const std::vector<AblationResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.name;
    for (double m : r.miou) os << '\t' << m;
    os << '\t' << r.median << '\n';
  }
  return os.str();
}

// Trains every (row, seed) pair in its own directory under base.out and scores
// pseudo masks on the evaluation corpus.
inline std::vector<AblationResult> run_ablation(const AblationOptions& opt, std::ostream* progress = nullptr) {
  if (opt.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (opt.base.out.empty() || opt.base.corpus.empty()) throw ConfigError("ablation needs corpus and out paths");
  const std::string eval_root = opt.eval_corpus.empty() ? opt.base.corpus : opt.eval_corpus;
  const auto eval_corpus = Corpus::open(eval_root);
  if (!eval_corpus.has_masks()) throw ConfigError("evaluation corpus " + eval_root + " has no masks");

  auto rows = component_rows(opt.base);
  if (opt.loss_ablation)
    for (auto& r : loss_rows(opt.base)) rows.push_back(r);

  struct Job {
    std::size_t row, seed;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t s = 0; s < opt.seeds.size(); ++s) jobs.push_back({r, s});

  std::vector<std::vector<double>> miou(rows.size(), std::vector<double>(opt.seeds.size(), 0.0));
  auto seconds = miou;
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        const auto& row = rows[jobs[j].row];
        TrainConfig cfg = row.config;
        cfg.seed = opt.seeds[jobs[j].seed];
        cfg.out = (std::filesystem::path(opt.base.out) / row.slug / ("seed" + std::to_string(cfg.seed))).string();
        const auto t0 = std::chrono::steady_clock::now();
        const auto trained = train(cfg);
        const auto model = load_model<float>(trained.checkpoint);
        const double m = evaluate_pseudo_masks(model, eval_corpus, opt.t_bg).miou();
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard<std::mutex> lock(mu);
        miou[jobs[j].row][jobs[j].seed] = m;
        seconds[jobs[j].row][jobs[j].seed] = dt;
        if (progress) *progress << row.name << " seed " << cfg.seed << ": mIoU " << std::fixed << std::setprecision(4) << m << std::endl;
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_workers = std::min<int>(effective_jobs(opt.jobs), static_cast<int>(jobs.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<AblationResult> out;
  for (std::size_t r = 0; r < rows.size(); ++r) out.push_back({rows[r].name, miou[r], median_of(miou[r]), seconds[r]});

  const std::filesystem::path dir(opt.base.out);
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "ablation.tsv", std::ios::trunc);
    os << format_ablation_tsv(out);
    std::ofstream txt(dir / "ablation.txt", std::ios::trunc);
    txt << format_ablation_table(out, opt.seeds.size());
  }
  RunManifest manifest;
  manifest.command = "ablate";
  manifest.config = opt.base.to_map();
  std::string seeds;
  for (auto s : opt.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  manifest.config["seeds"] = seeds;
  manifest.config["eval_corpus"] = eval_root;
  manifest.config["jobs"] = std::to_string(opt.jobs);
  manifest.config["loss_ablation"] = opt.loss_ablation ? "true" : "false";
  std::ostringstream tb;
  tb << std::setprecision(17) << opt.t_bg;
  manifest.config["t_bg"] = tb.str();
  manifest.corpus_hash = corpus_hash(opt.base.corpus);
  manifest.seed = opt.seeds.front();
  manifest.write(dir);
  return out;
}

}  // namespace ssc
