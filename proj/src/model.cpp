#include "pseqseg/model.hpp"

#include "pseqseg/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace pseqseg {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (classes < 1 || queries < 1 || embed_dim < 1 || key_dim < 1 || value_dim < 1 ||
      hidden_dim < 1) {
    throw ConfigError("ModelConfig: dimensions must be positive");
  }
  if (input_h <= 0 || input_w <= 0 || input_h % 8 != 0 || input_w % 8 != 0) {
    throw ConfigError("ModelConfig: input size must be positive and divisible by 8");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("ModelConfig: channel widths must be positive");
  }
}

Mat flatten_image(const ImageRGB& img) {
  const Index h = img.height(), w = img.width();
  Mat out(3, h * w);
  for (int c = 0; c < 3; ++c) {
    for (Index v = 0; v < h; ++v) {
      for (Index u = 0; u < w; ++u) out(c, v * w + u) = img.ch[c](v, u);
    }
  }
  return out;
}

namespace {

void init_normal(Mat& m, Rng& rng, Scalar stddev) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = stddev * rng.normal();
  }
}

}  // namespace

SegModel::SegModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed, 0x6d6f64656cULL);

  const int c0 = cfg_.widths[0], c1 = cfg_.widths[1], c2 = cfg_.widths[2];
  auto conv = [&](const std::string& name, int in_c, int out_c) {
    Mat& w = params_.create(name + ".w", out_c, static_cast<Index>(in_c) * 9);
    init_normal(w, rng, std::sqrt(2.0 / (static_cast<Scalar>(in_c) * 9)));
    params_.create(name + ".b", out_c, 1);
  };
  conv("enc1", 3, c0);
  conv("enc2", c0, c1);
  conv("enc3", c1, c2);

  auto linear = [&](const std::string& name, int in_d, int out_d) {
    Mat& w = params_.create(name + ".w", out_d, in_d);
    init_normal(w, rng, std::sqrt(1.0 / static_cast<Scalar>(in_d)));
    params_.create(name + ".b", out_d, 1);
  };
  linear("key", c2, cfg_.key_dim);
  linear("value", c2, cfg_.value_dim);
  linear("pix", c1, cfg_.embed_dim);  // per-pixel mask features, stride-4 map

  Mat& q = params_.create("queries", cfg_.queries, cfg_.key_dim);
  init_normal(q, rng, 1.0);

  linear("trunk", cfg_.value_dim, cfg_.hidden_dim);
  linear("cls", cfg_.hidden_dim, cfg_.classes);
  linear("box", cfg_.hidden_dim, 4);
  linear("embed", cfg_.hidden_dim, cfg_.embed_dim);
  linear("mq", cfg_.hidden_dim, cfg_.embed_dim);  // query-side mask features

  // Bias class logits low so early pseudo-scores start near the background
  // prior, and mask logits low so initial masks are sparse.
  params_.get("cls.b").setConstant(-2.0);
  params_.get("mq.b").setConstant(0.0);
  Mat& mb = params_.create("mask_bias", 1, 1);
  mb(0, 0) = -2.0;
}

std::vector<ad::Value> SegModel::make_leaves(bool needs_grad) const {
  std::vector<ad::Value> leaves;
  leaves.reserve(params_.count());
  for (std::size_t i = 0; i < params_.count(); ++i) {
    leaves.push_back(ad::leaf(params_.value(i), needs_grad));
  }
  return leaves;
}

TracedPrediction SegModel::forward_traced(const ImageRGB& img,
                                          const std::vector<ad::Value>& leaves) const {
  if (img.height() != cfg_.input_h || img.width() != cfg_.input_w) {
    throw InvalidInputError("forward: image size does not match model config");
  }
  if (leaves.size() != params_.count()) throw InvalidInputError("forward: bad leaf count");

  auto p = [&](const std::string& name) -> const ad::Value& {
    for (std::size_t i = 0; i < params_.count(); ++i) {
      if (params_.name(i) == name) return leaves[i];
    }
    throw InvalidInputError("forward: missing parameter " + name);
  };

  using namespace ad;
  const int c0 = cfg_.widths[0], c1 = cfg_.widths[1], c2 = cfg_.widths[2];

  Value x = constant(flatten_image(img));
  ConvGeom g1{3, cfg_.input_h, cfg_.input_w, c0, 3, 2, 1};
  Value f1 = relu(conv2d(x, p("enc1.w"), p("enc1.b"), g1));
  ConvGeom g2{c0, g1.out_h(), g1.out_w(), c1, 3, 2, 1};
  Value f2 = relu(conv2d(f1, p("enc2.w"), p("enc2.b"), g2));
  ConvGeom g3{c1, g2.out_h(), g2.out_w(), c2, 3, 2, 1};
  Value feat = relu(conv2d(f2, p("enc3.w"), p("enc3.b"), g3));  // (c2, S)

  // Pixel-wise projections of the final feature map.
  Value keys = add_colvec(matmul(p("key.w"), feat), p("key.b"));       // (dk, S)
  Value vals = add_colvec(matmul(p("value.w"), feat), p("value.b"));   // (dv, S)
  Value pix = add_colvec(matmul(p("pix.w"), feat), p("pix.b"));        // (D, S)

  // Queries attend over pixels.
  const Scalar inv_sqrt_dk = 1.0 / std::sqrt(static_cast<Scalar>(cfg_.key_dim));
  Value attn = softmax_rows(scale(matmul(p("queries"), keys), inv_sqrt_dk));  // (P, S)
  Value pooled = matmul(attn, transpose(vals));                               // (P, dv)

  Value hidden = relu(add_rowvec(matmul(pooled, transpose(p("trunk.w"))),
                                 transpose(p("trunk.b"))));  // (P, dh)

  Value cls_logits = add_rowvec(matmul(hidden, transpose(p("cls.w"))), transpose(p("cls.b")));
  Value scores = sigmoid(cls_logits);  // (P, C)

  Value box_params = sigmoid(add_rowvec(matmul(hidden, transpose(p("box.w"))),
                                        transpose(p("box.b"))));
  Value boxes = boxes_from_cxcywh(box_params);  // (P, 4)

  Value embeds = add_rowvec(matmul(hidden, transpose(p("embed.w"))), transpose(p("embed.b")));

  // Query-pixel dot products form coarse mask logits, upsampled to input size.
  Value mask_q = add_rowvec(matmul(hidden, transpose(p("mq.w"))), transpose(p("mq.b")));
  const Scalar inv_sqrt_d = 1.0 / std::sqrt(static_cast<Scalar>(cfg_.embed_dim));
  Value mask_logits = add_broadcast(scale(matmul(mask_q, pix), inv_sqrt_d), p("mask_bias"));
  Value mask_full = upsample_bilinear(mask_logits, cfg_.feat_h(), cfg_.feat_w(), cfg_.input_h,
                                      cfg_.input_w);
  Value masks = sigmoid(mask_full);  // (P, H*W)

  return TracedPrediction{scores, boxes, masks, embeds};
}

PredictionBatch SegModel::forward(const ImageRGB& img) const {
  return forward_traced(img, make_leaves(false)).detach();
}

PredictionBatch SegModel::forward_no_grad(const ImageRGB& img) const { return forward(img); }

namespace {

constexpr char kMagic[8] = {'P', 'S', 'Q', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
  return json{{"classes", c.classes},     {"queries", c.queries},
              {"embed_dim", c.embed_dim}, {"key_dim", c.key_dim},
              {"value_dim", c.value_dim}, {"hidden_dim", c.hidden_dim},
              {"widths", c.widths},       {"input_h", c.input_h},
              {"input_w", c.input_w}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.classes = j.at("classes");
  c.queries = j.at("queries");
  c.embed_dim = j.at("embed_dim");
  c.key_dim = j.at("key_dim");
  c.value_dim = j.at("value_dim");
  c.hidden_dim = j.at("hidden_dim");
  c.widths = j.at("widths");
  c.input_h = j.at("input_h");
  c.input_w = j.at("input_w");
  return c;
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

}  // namespace

void SegModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);

  const std::string cfg_str = config_to_json(cfg_).dump();
  write_pod(out, static_cast<std::uint64_t>(cfg_str.size()));
  out.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

  write_pod(out, static_cast<std::uint64_t>(params_.count()));
  for (std::size_t i = 0; i < params_.count(); ++i) {
    const std::string& name = params_.name(i);
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Mat& m = params_.value(i);
    write_pod(out, static_cast<std::uint64_t>(m.rows()));
    write_pod(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
  }
  if (!out) throw IoError("save: write failed for " + path);
}

SegModel SegModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load: cannot open " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("load: not a checkpoint file: " + path);
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw IoError("load: unsupported checkpoint version " + std::to_string(version));
  }

  const auto cfg_len = read_pod<std::uint64_t>(in);
  std::string cfg_str(cfg_len, '\0');
  in.read(cfg_str.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw IoError("load: truncated config");
  ModelConfig cfg = config_from_json(json::parse(cfg_str));

  SegModel model(cfg, 0);
  const auto n_params = read_pod<std::uint64_t>(in);
  if (n_params != model.params_.count()) {
    throw IoError("load: parameter count mismatch");
  }
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    Mat& dst = model.params_.get(name);
    if (static_cast<std::uint64_t>(dst.rows()) != rows ||
        static_cast<std::uint64_t>(dst.cols()) != cols) {
      throw IoError("load: shape mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * dst.size()));
    if (!in) throw IoError("load: truncated parameter " + name);
  }
  return model;
}

}  // namespace pseqseg
