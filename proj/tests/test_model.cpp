#include "pseqseg/model.hpp"

#include "pseqseg/assignment.hpp"
#include "pseqseg/losses.hpp"
#include "pseqseg/nn.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace pseqseg;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.queries = 8;
  cfg.embed_dim = 16;
  cfg.key_dim = 16;
  cfg.value_dim = 24;
  cfg.hidden_dim = 24;
  cfg.widths = {8, 12, 16};
  cfg.input_h = 48;
  cfg.input_w = 64;
  return cfg;
}

ImageRGB random_image(Rng& rng, Index h, Index w) {
  ImageRGB img(h, w);
  for (auto& c : img.ch) {
    for (Index v = 0; v < h; ++v) {
      for (Index u = 0; u < w; ++u) c(v, u) = rng.uniform();
    }
  }
  return img;
}

}  // namespace

TEST_CASE("forward output shapes and ranges") {
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 7);
  Rng rng(1);
  const ImageRGB img = random_image(rng, cfg.input_h, cfg.input_w);
  const PredictionBatch out = model.forward(img);

  CHECK(out.class_scores.rows() == cfg.queries);
  CHECK(out.class_scores.cols() == cfg.classes);
  CHECK(out.boxes.rows() == cfg.queries);
  CHECK(out.boxes.cols() == 4);
  CHECK(out.masks.rows() == cfg.queries);
  CHECK(out.masks.cols() == cfg.input_h * cfg.input_w);
  CHECK(out.embeddings.rows() == cfg.queries);
  CHECK(out.embeddings.cols() == cfg.embed_dim);

  CHECK((out.class_scores.array() >= 0.0).all());
  CHECK((out.class_scores.array() <= 1.0).all());
  CHECK((out.masks.array() >= 0.0).all());
  CHECK((out.masks.array() <= 1.0).all());
  for (Index i = 0; i < cfg.queries; ++i) {
    CHECK(out.boxes(i, 0) >= 0.0);
    CHECK(out.boxes(i, 1) >= 0.0);
    CHECK(out.boxes(i, 2) <= 1.0);
    CHECK(out.boxes(i, 3) <= 1.0);
    CHECK(out.boxes(i, 0) <= out.boxes(i, 2));
    CHECK(out.boxes(i, 1) <= out.boxes(i, 3));
  }
}

TEST_CASE("forward is deterministic and matches forward_no_grad bit-exactly") {
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 11);
  Rng rng(2);
  const ImageRGB img = random_image(rng, cfg.input_h, cfg.input_w);

  const PredictionBatch a = model.forward(img);
  const PredictionBatch b = model.forward(img);
  const PredictionBatch c = model.forward_no_grad(img);
  CHECK((a.class_scores.array() == b.class_scores.array()).all());
  CHECK((a.masks.array() == b.masks.array()).all());
  CHECK((a.boxes.array() == c.boxes.array()).all());
  CHECK((a.embeddings.array() == c.embeddings.array()).all());
}

TEST_CASE("extreme inputs stay finite and in range") {
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 13);
  ImageRGB zeros(cfg.input_h, cfg.input_w);
  ImageRGB ones(cfg.input_h, cfg.input_w);
  for (auto& c : ones.ch) c.setConstant(1.0);

  for (const ImageRGB* img : {&zeros, &ones}) {
    const PredictionBatch out = model.forward(*img);
    CHECK(out.class_scores.allFinite());
    CHECK(out.boxes.allFinite());
    CHECK(out.masks.allFinite());
    CHECK(out.embeddings.allFinite());
    CHECK((out.class_scores.array() >= 0.0).all());
    CHECK((out.class_scores.array() <= 1.0).all());
  }
}

TEST_CASE("no-grad leaves yield a constant graph") {
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 17);
  Rng rng(3);
  const ImageRGB img = random_image(rng, cfg.input_h, cfg.input_w);

  auto leaves = model.make_leaves(false);
  TracedPrediction out = model.forward_traced(img, leaves);
  CHECK_FALSE(ad::sum(out.class_scores)->needs_grad);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 19);
  Rng rng(4);
  const ImageRGB img = random_image(rng, cfg.input_h, cfg.input_w);
  const PredictionBatch before = model.forward(img);

  const std::string path = "test_model_ckpt.bin";
  model.save(path);
  SegModel loaded = SegModel::load(path);
  const PredictionBatch after = loaded.forward(img);

  CHECK((before.class_scores.array() == after.class_scores.array()).all());
  CHECK((before.boxes.array() == after.boxes.array()).all());
  CHECK((before.masks.array() == after.masks.array()).all());
  CHECK((before.embeddings.array() == after.embeddings.array()).all());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  CHECK_THROWS_AS(SegModel::load("does_not_exist.bin"), IoError);

  // Corrupt the version field.
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 23);
  const std::string path = "test_model_badver.bin";
  model.save(path);
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f);
    std::fseek(f, 8, SEEK_SET);  // magic is 8 bytes, version follows
    const std::uint32_t bad = 999;
    std::fwrite(&bad, sizeof(bad), 1, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(SegModel::load(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("model gradients reach every parameter") {
  const ModelConfig cfg = tiny_config();
  SegModel model(cfg, 29);
  Rng rng(5);
  const ImageRGB img = random_image(rng, cfg.input_h, cfg.input_w);

  auto leaves = model.make_leaves(true);
  TracedPrediction out = model.forward_traced(img, leaves);
  ad::Value loss = ad::add(ad::add(ad::sum(out.class_scores), ad::sum(out.masks)),
                           ad::add(ad::sum(out.boxes), ad::sum(out.embeddings)));
  ad::backward(loss);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    INFO("parameter ", model.params().name(i));
    CHECK(leaves[i]->grad.size() != 0);
    CHECK(leaves[i]->grad.allFinite());
  }
}

TEST_CASE("200 overfitting steps shrink the supervised loss below 10%") {
  ModelConfig cfg = tiny_config();
  SegModel model(cfg, 31);
  const Index h = cfg.input_h, w = cfg.input_w;

  // One fixed toy image: flat background with two bright rectangles.
  ImageRGB img(h, w);
  for (auto& c : img.ch) c.setConstant(0.2);
  TargetSet targets;
  targets.labels = {0, 0};
  targets.boxes = Mat(2, 4);
  targets.masks = Mat::Zero(2, h * w);
  auto add_rect = [&](Index g, Index v0, Index u0, Index v1, Index u1, int chan) {
    for (Index v = v0; v <= v1; ++v) {
      for (Index u = u0; u <= u1; ++u) {
        img.ch[static_cast<std::size_t>(chan)](v, u) = 0.9;
        targets.masks(g, v * w + u) = 1.0;
      }
    }
    targets.boxes.row(g) << static_cast<Scalar>(u0) / w, static_cast<Scalar>(v0) / h,
        static_cast<Scalar>(u1 + 1) / w, static_cast<Scalar>(v1 + 1) / h;
  };
  add_rect(0, 6, 8, 20, 24, 0);
  add_rect(1, 28, 36, 42, 56, 2);

  nn::AdamW opt;
  opt.lr = 3e-3;
  opt.weight_decay = 1e-4;
  LossWeights lw;

  Scalar initial = 0, final_loss = 0;
  for (int step = 0; step < 200; ++step) {
    auto leaves = model.make_leaves(true);
    TracedPrediction out = model.forward_traced(img, leaves);
    const CostMatrix cost = pairwise_cost(out.detach(), targets, lw);
    const Assignment asg = ot_assign(cost, 2);
    ad::Value loss = supervised_loss(out, targets, asg, lw);
    const Scalar value = ad::item(loss);
    if (step == 0) initial = value;
    final_loss = value;
    ad::backward(loss);
    std::vector<Mat> grads;
    for (const auto& leaf : leaves) {
      grads.push_back(leaf->grad.size() ? leaf->grad
                                        : Mat::Zero(leaf->val.rows(), leaf->val.cols()));
    }
    opt.step(model.params(), grads);
  }
  INFO("initial ", initial, " final ", final_loss);
  CHECK(final_loss < 0.10 * initial);
}
