#include <gtest/gtest.h>

#include <fstream>

#include "ssc/gradcheck.hpp"
#include "ssc/trainer.hpp"
#include "test_util.hpp"

namespace ssc {
namespace {

// Small corpus with superpixel caches, shared by the training tests.
const fs::path& tiny_corpus() {
  static const fs::path dir = [] {
    auto d = testing::scratch_dir("trainer_corpus");
    generate_synthetic_corpus(d, SyntheticSpec{8, 2, 32, 3});
    const auto c = Corpus::open(d);
    for (const auto& s : c)
      save_superpixels(superpixel_cache_path(d, s.image.id),
                       compute_superpixels(s.image.pixels, SuperpixelParams::defaults_for(32, 32)));
    return d;
  }();
  return dir;
}

TrainConfig tiny_config(const std::string& out) {
  TrainConfig c;
  c.corpus = tiny_corpus().string();
  c.out = (testing::scratch_dir(out)).string();
  c.backbone_widths = "4,8";
  c.decoder_width = 4;
  c.train_size = 32;
  c.erosion_r = 2;
  c.epochs = 1;
  c.batch_size = 4;
  return c;
}

TEST(Config, ParseTextWithComments) {
  const auto m = parse_config_text("# header\nlr = 0.05\n\n  epochs=3  # inline\nrecon_loss = l1\n", "x.cfg");
  EXPECT_EQ(m.at("lr"), "0.05");
  EXPECT_EQ(m.at("epochs"), "3");
  const auto c = TrainConfig::from_map(m);
  EXPECT_EQ(c.lr, 0.05);
  EXPECT_EQ(c.epochs, 3);
  EXPECT_EQ(c.recon_loss, "l1");
  EXPECT_EQ(c.beta_p, 1.0);
  EXPECT_EQ(c.beta_a, 1.0);
}

TEST(Config, Errors) {
  try {
    parse_config_text("lr = 1\nnot a pair\n", "bad.cfg");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(TrainConfig::from_map({{"learning_rate", "0.1"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"lr", "fast"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"lr", "0"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"beta_a", "-1"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"epochs", "0"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"drs_enabled", "maybe"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_map({{"recon_loss", "ssim"}}), ConfigError);
}

TEST(Config, MapRoundTrip) {
  TrainConfig c;
  c.lr = 0.1 / 3;
  c.asm_enabled = false;
  c.seed = 12345678901ULL;
  const auto back = TrainConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.lr, c.lr);
  for (const auto& [k, v] : c.to_map()) EXPECT_TRUE(TrainConfig::keys().count(k)) << k;
}

TEST(LrSchedule, Examples) {
  EXPECT_EQ(lr_schedule(0, 10, 0.01), 0.01);
  EXPECT_NEAR(lr_schedule(9, 10, 1.0), 0.12589254117941673, 1e-15);
  double prev = 1e9;
  for (long s = 0; s < 1000; ++s) {
    const double lr = lr_schedule(s, 1000, 0.1);
    EXPECT_LE(lr, prev);
    EXPECT_GT(lr, 0.0);
    prev = lr;
  }
  EXPECT_THROW(lr_schedule(10, 10, 0.1), ArgumentError);
}

TEST(Sgd, MomentumAndDecayExemptions) {
  ParamStore<double> s;
  s.add("a.w", Tensor<double>(Shape{1}, 1.0));
  s.add("a.norm.g", Tensor<double>(Shape{1}, 1.0));
  SgdMomentum<double> opt(0.5, 0.1);
  s.grad("a.w")[0] = 1.0;
  s.grad("a.norm.g")[0] = 1.0;
  opt.step(s, 0.1);
  EXPECT_DOUBLE_EQ(s.value("a.w")[0], 1.0 - 0.1 * 1.1);
  EXPECT_DOUBLE_EQ(s.value("a.norm.g")[0], 0.9);
  opt.step(s, 0.1);  // v = 0.5 * 1 + 1 for the norm parameter
  EXPECT_DOUBLE_EQ(s.value("a.norm.g")[0], 0.9 - 0.15);
}

TEST(Losses, TotalIsWeightedSumAndDisabledTermsAreZero) {
  const auto mp = mini_problem(3);
  auto model = build_model<double>(mp.spec, 3);
  LossNetwork<double> net(mp.loss_net);
  const auto img = mp.image.cast<double>();
  SampleData<double> sd{&img, &mp.labels, &mp.superpixels};
  auto sw = mp.switches;
  sw.beta_p = 0.5;
  sw.beta_a = 2.0;
  {
    ag::Tape<double> tape;
    Binder<double> b(tape, model.params, false);
    const auto t = sample_losses(tape, b, mp.spec, &net, sd, sw);
    EXPECT_NEAR(t.total.item(), t.l_cls.item() + 0.5 * t.l_p.item() + 2.0 * t.l_a.item(), 1e-14);
    EXPECT_GT(t.l_p.item(), 0.0);
  }
  sw.cdr = false;
  sw.asm_ = false;
  ag::Tape<double> tape;
  Binder<double> b(tape, model.params, false);
  const auto t = sample_losses(tape, b, mp.spec, &net, sd, sw);
  EXPECT_EQ(t.l_p.item(), 0.0);
  EXPECT_EQ(t.l_a.item(), 0.0);
  EXPECT_EQ(t.total.item(), t.l_cls.item());
}

TEST(Train, ZeroBetaMatchesDisabledComponentBitwise) {
  auto a = tiny_config("beta0_a");
  a.beta_p = 0;
  a.asm_enabled = false;
  a.max_images = 4;
  auto b = a;
  b.out = testing::scratch_dir("beta0_b").string();
  b.cdr_enabled = false;
  b.beta_p = 1;
  const auto ra = train(a), rb = train(b);
  const auto ma = load_model<float>(ra.checkpoint), mb = load_model<float>(rb.checkpoint);
  for (const auto& e : mb.params.entries()) EXPECT_EQ(ma.params.value(e.name), e.value) << e.name;
  EXPECT_TRUE(has_decoder(ma.params));
}

TEST(Train, DeterministicCheckpointsAndLogs) {
  auto a = tiny_config("det_a");
  auto b = a;
  b.out = testing::scratch_dir("det_b").string();
  a.epochs = b.epochs = 2;
  train(a);
  train(b);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  EXPECT_EQ(slurp(fs::path(a.out) / "checkpoint.ssck"), slurp(fs::path(b.out) / "checkpoint.ssck"));
  EXPECT_EQ(slurp(fs::path(a.out) / "train_log.tsv"), slurp(fs::path(b.out) / "train_log.tsv"));
  // One line per step: 8 images, batch 4, 2 epochs.
  const auto log = slurp(fs::path(a.out) / "train_log.tsv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  const auto first = log.substr(0, log.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), '\t'), 5);
  EXPECT_TRUE(fs::exists(fs::path(a.out) / "manifest.json"));
}

TEST(Train, LossNetworkAndSuperpixelsUntouched) {
  auto c = tiny_config("immut");
  LossNetwork<float> before;
  const auto sp_path = superpixel_cache_path(tiny_corpus(), image_id(0));
  const auto sp_before = load_superpixels(sp_path);
  const auto t0 = fs::last_write_time(sp_path);
  train(c);
  LossNetwork<float> after;
  for (const auto& e : before.params().entries()) EXPECT_EQ(after.params().value(e.name), e.value);
  EXPECT_EQ(load_superpixels(sp_path), sp_before);
  EXPECT_EQ(fs::last_write_time(sp_path), t0);
}

TEST(Train, MissingSuperpixelCacheNamesTheImage) {
  const auto dir = testing::scratch_dir("nocache");
  generate_synthetic_corpus(dir, SyntheticSpec{2, 2, 32, 1});
  auto c = tiny_config("nocache_out");
  c.corpus = dir.string();
  try {
    train(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(image_id(0)), std::string::npos) << e.what();
  }
  c.asm_enabled = false;
  EXPECT_NO_THROW(train(c));
}

TEST(Train, EpochMeansAreReported) {
  auto c = tiny_config("epochs");
  c.epochs = 2;
  const auto r = train(c);
  ASSERT_EQ(r.epochs.size(), 2u);
  for (const auto& e : r.epochs) {
    EXPECT_NEAR(e.total, e.l_cls + e.l_p + e.l_a, 1e-9);
    EXPECT_GT(e.l_p, 0.0);
  }
}

TEST(GradCheck, BothPrecisionsWithinThresholds) {
  const auto r64 = grad_check<double>();
  const auto r32 = grad_check<float>();
  EXPECT_GT(r64.num_params, 0u);
  for (const auto& loss : {"cls", "p", "a"}) {
    EXPECT_LT(r64.max_rel(loss), 1e-6) << loss;
    EXPECT_LT(r32.max_rel(loss), 1e-3) << loss;
  }
}

}  // namespace
}  // namespace ssc
