#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <set>

#include "befunet/checkpoint.hpp"
#include "befunet/data.hpp"
#include "befunet/losses.hpp"
#include "befunet/model.hpp"
#include "befunet/train.hpp"

using namespace befunet;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny32(int k = 2) {
  ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.base_dim = 8;
  cfg.window = 2;
  cfg.lca_h = cfg.lca_w = 2;
  cfg.num_classes = k;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("befunet_model_" + name)).string();
}

}  // namespace

TEST(ModelConfig, ValidatesDivisibility) {
  ModelConfig cfg = tiny32();
  cfg.height = 40;  // not a multiple of 32
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny32();
  cfg.heads = {3, 2, 4, 8};  // 8 % 3 != 0
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny32();
  cfg.use_edge_encoder = false;  // LCAF without EE
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(tiny32().validate());
  EXPECT_NO_THROW(ModelConfig::paper().validate());
}

TEST(Befunet, TinyForwardShapes) {
  ModelConfig cfg;
  cfg.num_classes = 2;
  Rng rng(301);
  Befunet<float> model(cfg, rng);
  const auto samples = generate_synthetic(1, 64, 64, 2, 4);
  Ctx<float> ctx;
  const auto out = model.forward(ctx, image_tensor<float>(samples[0]));
  EXPECT_EQ(out.logits.shape(), (std::vector<int>{64, 64, 2}));
  ASSERT_EQ(out.side_maps.size(), 4u);
  for (const auto& m : out.side_maps)
    EXPECT_EQ(m.shape(), (std::vector<int>{64, 64, 1}));
}

TEST(Befunet, PaperConfigForwardShape) {
  Rng rng(302);
  Befunet<float> model(ModelConfig::paper(), rng);
  Ctx<float> ctx;
  auto img = Tensor<float>::full({224, 224, 3}, 0.4f);
  const auto out = model.forward(ctx, img);
  EXPECT_EQ(out.logits.shape(), (std::vector<int>{224, 224, 9}));
  EXPECT_EQ(out.side_maps.size(), 4u);
}

TEST(Befunet, PerPixelSoftmaxSumsToOne) {
  ModelConfig cfg = tiny32(3);
  Rng rng(303);
  Befunet<double> model(cfg, rng);
  const auto samples = generate_synthetic(1, 32, 32, 3, 9);
  Ctx<double> ctx;
  const auto out = model.forward(ctx, image_tensor<double>(samples[0]));
  const auto probs = softmax_rows(ctx, out.logits);
  for (std::size_t p = 0; p < probs.numel() / 3; ++p) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += probs.value()[p * 3 + c];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Befunet, ForwardDeterministicGivenParametersAndInput) {
  ModelConfig cfg = tiny32();
  const auto samples = generate_synthetic(1, 32, 32, 2, 21);
  auto run = [&]() {
    Rng rng(304);
    Befunet<double> model(cfg, rng);
    Ctx<double> ctx;
    return model.forward(ctx, image_tensor<double>(samples[0])).logits.value();
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Ablation, ParameterSetsTrackToggles) {
  ModelConfig cfg = tiny32();
  auto names_for = [&](bool ee, bool lcaf, bool dlf) {
    Rng rng(305);
    auto model = build_ablation<float>(cfg, {ee, lcaf, dlf}, rng);
    std::set<std::string> names;
    for (const auto& p : model.parameters()) {
      const auto dot = p.name.find('.');
      names.insert(p.name.substr(0, dot));
    }
    return names;
  };
  const auto base = names_for(false, false, false);
  EXPECT_TRUE(base.count("body"));
  EXPECT_TRUE(base.count("decoder"));
  EXPECT_FALSE(base.count("edge"));
  EXPECT_FALSE(base.count("lcaf"));
  EXPECT_FALSE(base.count("dlf"));
  const auto with_dlf = names_for(false, false, true);
  EXPECT_TRUE(with_dlf.count("dlf"));
  EXPECT_FALSE(with_dlf.count("edge"));
  const auto with_ee = names_for(true, false, false);
  EXPECT_TRUE(with_ee.count("edge"));
  EXPECT_FALSE(with_ee.count("lcaf"));
  const auto full = names_for(true, true, true);
  EXPECT_TRUE(full.count("edge"));
  EXPECT_TRUE(full.count("lcaf"));
  EXPECT_TRUE(full.count("dlf"));
}

TEST(Ablation, LcafWithoutEdgeEncoderRejected) {
  Rng rng(306);
  EXPECT_THROW(build_ablation<float>(tiny32(), {false, true, false}, rng), ConfigError);
}

TEST(Ablation, EdgeSumFusionAndLossPathsWork) {
  ModelConfig cfg = tiny32();
  const auto samples = generate_synthetic(1, 32, 32, 2, 11);
  LossWeights<double> lw;

  // {EE} without LCAF: fusion degenerates to elementwise sum; the edge
  // loss is active.
  Rng rng(307);
  auto model = build_ablation<double>(cfg, {true, false, false}, rng);
  Ctx<double> ctx;
  auto out = model.forward(ctx, image_tensor<double>(samples[0]));
  EXPECT_EQ(out.side_maps.size(), 4u);
  EXPECT_EQ(out.logits.shape(), (std::vector<int>{32, 32, 2}));

  // body-only: no side maps, the gamma term vanishes identically
  Rng rng2(308);
  auto body_only = build_ablation<double>(cfg, {false, false, false}, rng2);
  auto out2 = body_only.forward(ctx, image_tensor<double>(samples[0]));
  EXPECT_TRUE(out2.side_maps.empty());
  const double with_gamma =
      total_loss(ctx, out2, onehot_tensor<double>(samples[0], 2),
                 edge_target_tensor<double>(samples[0]), lw)
          .item();
  LossWeights<double> lw0 = lw;
  lw0.gamma = 0;
  const double without_gamma =
      total_loss(ctx, out2, onehot_tensor<double>(samples[0], 2),
                 edge_target_tensor<double>(samples[0]), lw0)
          .item();
  EXPECT_DOUBLE_EQ(with_gamma, without_gamma);
}

TEST(Ablation, AllShapesIdenticalAcrossConfigurations) {
  ModelConfig cfg = tiny32();
  const auto samples = generate_synthetic(1, 32, 32, 2, 13);
  const bool toggles[5][3] = {{false, false, false},
                              {false, false, true},
                              {true, false, false},
                              {true, true, false},
                              {true, true, true}};
  for (const auto& t : toggles) {
    Rng rng(309);
    auto model = build_ablation<float>(cfg, {t[0], t[1], t[2]}, rng);
    Ctx<float> ctx;
    const auto out = model.forward(ctx, image_tensor<float>(samples[0]));
    EXPECT_EQ(out.logits.shape(), (std::vector<int>{32, 32, 2}));
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  ModelConfig cfg = tiny32();
  Rng rng(310);
  Befunet<float> model(cfg, rng);
  const std::string path = temp_path("rt.ckpt");
  save_checkpoint(model.parameters(), path);

  Rng rng2(999);  // different init, then overwritten by the checkpoint
  Befunet<float> loaded(cfg, rng2);
  load_checkpoint_into(loaded.parameters(), path);

  const auto pa = model.parameters();
  const auto pb = loaded.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].tensor.numel(), pb[i].tensor.numel());
    for (std::size_t j = 0; j < pa[i].tensor.numel(); ++j)
      EXPECT_EQ(pa[i].tensor.value()[j], pb[i].tensor.value()[j]);
  }

  const auto samples = generate_synthetic(1, 32, 32, 2, 3);
  Ctx<float> ctx;
  const auto a = model.forward(ctx, image_tensor<float>(samples[0])).logits.value();
  const auto b = loaded.forward(ctx, image_tensor<float>(samples[0])).logits.value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  fs::remove(path);
}

TEST(Checkpoint, CorruptedMagicRejected) {
  ModelConfig cfg = tiny32();
  Rng rng(311);
  Befunet<float> model(cfg, rng);
  const std::string path = temp_path("bad.ckpt");
  save_checkpoint(model.parameters(), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_checkpoint<float>(path), FormatError);
  fs::remove(path);
}

TEST(Checkpoint, TruncatedFileRejected) {
  ModelConfig cfg = tiny32();
  Rng rng(312);
  Befunet<float> model(cfg, rng);
  const std::string path = temp_path("trunc.ckpt");
  save_checkpoint(model.parameters(), path);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint<float>(path), IoError);
  fs::remove(path);
}

// File size must equal the header plus 4 bytes per parameter plus the
// per-tensor metadata, pinned against the counted parameters.
TEST(Checkpoint, SizeMatchesParameterCount) {
  ModelConfig cfg = tiny32();
  Rng rng(313);
  Befunet<float> model(cfg, rng);
  const auto params = model.parameters();
  const std::string path = temp_path("size.ckpt");
  save_checkpoint(params, path);
  std::size_t want = 4 + 4 + 4;  // magic, version, count
  for (const auto& p : params) {
    want += 2 + p.name.size() + 1 + 1;                       // name, dtype, rank
    want += 4 * static_cast<std::size_t>(p.tensor.rank());   // dims
    want += 4 * p.tensor.numel();                            // f32 payload
  }
  EXPECT_EQ(fs::file_size(path), want);
  fs::remove(path);
}

TEST(Checkpoint, DtypeMismatchRejected) {
  ModelConfig cfg = tiny32();
  Rng rng(314);
  Befunet<double> model(cfg, rng);
  const std::string path = temp_path("dtype.ckpt");
  save_checkpoint(model.parameters(), path);
  EXPECT_THROW(load_checkpoint<float>(path), FormatError);
  fs::remove(path);
}

// One AdamW step on a fixed batch strictly decreases the loss at a small
// learning rate, across 5 seeds.
TEST(Training, SingleStepDecreasesLoss) {
  const auto samples = generate_synthetic(4, 32, 32, 2, 88);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelConfig cfg = tiny32();
    Rng rng(seed);
    Befunet<double> model(cfg, rng);
    ParamList<double> params = model.parameters();
    AdamW<double> opt;
    opt.lr = 1e-4;
    opt.weight_decay = 0.0;
    opt.init(params);
    LossWeights<double> lw;

    auto batch_loss = [&](Ctx<double>& ctx) {
      Tensor<double> acc;
      for (const auto& s : samples) {
        auto out = model.forward(ctx, image_tensor<double>(s));
        auto l = total_loss(ctx, out, onehot_tensor<double>(s, 2),
                            edge_target_tensor<double>(s), lw);
        acc = acc.defined() ? add(ctx, acc, l) : l;
      }
      return scale(ctx, acc, 0.25);
    };

    Tape<double> tape;
    Ctx<double> ctx;
    ctx.tape = &tape;
    auto loss = batch_loss(ctx);
    const double before = loss.item();
    opt.zero_grad(params);
    tape.backward(loss);
    opt.step(params);

    Ctx<double> plain;
    const double after = batch_loss(plain).item();
    EXPECT_LT(after, before) << "seed " << seed;
  }
}

// Every DLF parameter is on the path from image to logits, so the body
// loss alone (gamma = 0) must reach all of them.
TEST(Befunet, DlfParametersReceiveGradientFromBodyLoss) {
  ModelConfig cfg = tiny32();
  Rng rng(320);
  Befunet<double> model(cfg, rng);
  ParamList<double> params = model.parameters();
  for (auto& p : params)
    for (auto& v : p.tensor.value()) v += rng.uniform(-0.05, 0.05);
  const auto samples = generate_synthetic(1, 32, 32, 2, 66);
  LossWeights<double> lw;
  lw.gamma = 0.0;
  Tape<double> tape;
  Ctx<double> ctx;
  ctx.tape = &tape;
  auto out = model.forward(ctx, image_tensor<double>(samples[0]));
  auto loss = total_loss(ctx, out, onehot_tensor<double>(samples[0], 2),
                         edge_target_tensor<double>(samples[0]), lw);
  for (auto& p : params) p.tensor.zero_grad();
  tape.backward(loss);
  for (const auto& p : params) {
    if (p.name.rfind("dlf", 0) != 0) continue;
    double norm = 0;
    for (double g : p.tensor.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << "dead DLF parameter: " << p.name;
  }
}

// Non-finite loss aborts training with a diagnostic instead of looping.
TEST(Training, NanLossAborts) {
  ModelConfig cfg = tiny32();
  Rng rng(321);
  Befunet<float> model(cfg, rng);
  // poison past the ReLUs (a NaN conv weight would be masked by relu's
  // comparison taking the zero branch)
  for (auto& p : model.parameters())
    if (p.name == "decoder.head.b")
      p.tensor.value()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto corpus = generate_synthetic(4, 32, 32, 2, 14);
  RunConfig rc;
  rc.model = cfg;
  rc.epochs = 1;
  rc.batch_size = 2;
  rc.out_dir.clear();
  try {
    train_model(model, corpus, {}, rc);
    FAIL() << "expected abort on NaN loss";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Training, PlateauSchedulerHalvesAfterPatience) {
  PlateauScheduler sched;
  sched.patience = 2;
  double lr = 1.0;
  lr = sched.step(10.0, lr);  // best
  EXPECT_DOUBLE_EQ(lr, 1.0);
  lr = sched.step(11.0, lr);  // bad 1
  lr = sched.step(11.0, lr);  // bad 2
  EXPECT_DOUBLE_EQ(lr, 1.0);
  lr = sched.step(11.0, lr);  // bad 3 > patience
  EXPECT_DOUBLE_EQ(lr, 0.5);
}
