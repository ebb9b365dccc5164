#include "pseqseg/trainer.hpp"

#include "pseqseg/assignment.hpp"
#include "pseqseg/losses.hpp"
#include "pseqseg/nn.hpp"
#include "pseqseg/png_io.hpp"
#include "pseqseg/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace pseqseg {

namespace fs = std::filesystem;

DatasetCache DatasetCache::load(const std::string& dataset_dir, Index model_h, Index model_w) {
  const fs::path root(dataset_dir);
  AnnotationSet set = load_annotations((root / "annotations.json").string());

  DatasetCache cache;
  cache.height = model_h;
  cache.width = model_w;
  for (const auto& cat : set.categories) cache.category_ids.push_back(cat.id);
  std::sort(cache.category_ids.begin(), cache.category_ids.end());

  std::map<int, std::vector<const AnnotationRecord*>> by_image;
  for (const auto& ann : set.annotations) by_image[ann.image_id].push_back(&ann);

  for (const auto& img : set.images) {
    cache.native_h = img.height;
    cache.native_w = img.width;
    ImageRGB native = read_png((root / img.file).string());
    cache.ids.push_back(img.id);
    cache.images.push_back(native.height() == model_h && native.width() == model_w
                               ? std::move(native)
                               : resize_bilinear(native, model_h, model_w));
    std::vector<BinaryMask> masks;
    std::vector<int> labels;
    const auto it = by_image.find(img.id);
    if (it != by_image.end()) {
      for (const AnnotationRecord* ann : it->second) {
        BinaryMask m = rle_decode(ann->mask);
        if (m.height() != model_h || m.width() != model_w) {
          m = resize_nearest(m, model_h, model_w);
        }
        if (m.empty()) continue;  // vanished at this resolution
        const auto cat_pos = std::lower_bound(cache.category_ids.begin(),
                                              cache.category_ids.end(), ann->category_id);
        masks.push_back(std::move(m));
        labels.push_back(static_cast<int>(cat_pos - cache.category_ids.begin()));
      }
    }
    cache.gt_masks.push_back(std::move(masks));
    cache.gt_labels.push_back(std::move(labels));
  }
  return cache;
}

std::size_t DatasetCache::index_of(int image_id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == image_id) return i;
  }
  throw InvalidInputError("DatasetCache: unknown image id " + std::to_string(image_id));
}

namespace {

TargetSet frame_targets(const FrameTruth& truth, Index h, Index w) {
  TargetSet t;
  t.labels.reserve(truth.instances.size());
  t.boxes = Mat::Zero(static_cast<Index>(truth.instances.size()), 4);
  t.masks = Mat::Zero(static_cast<Index>(truth.instances.size()), h * w);
  Index g = 0;
  for (const auto& inst : truth.instances) {
    t.labels.push_back(inst.label);
    const BBox nb = pixel_box_to_normalized(inst.box, h, w);
    t.boxes(g, 0) = nb.x_min;
    t.boxes(g, 1) = nb.y_min;
    t.boxes(g, 2) = nb.x_max;
    t.boxes(g, 3) = nb.y_max;
    for (Index v = 0; v < h; ++v) {
      for (Index u = 0; u < w; ++u) {
        t.masks(g, v * w + u) = inst.mask.values(v, u) ? 1.0 : 0.0;
      }
    }
    ++g;
  }
  return t;
}

// Association loss between two frames of one sequence: anchors are the
// positive views of each corresponded instance in frame 1, positives its
// views in frame 2, negatives the rest of frame 2 (optionally both frames).
ad::Value sequence_embed_loss(const PseudoSequence& seq, const TracedPrediction& t1,
                              const TracedPrediction& t2, const TargetSet& targets1,
                              const TargetSet& targets2, const Assignment& asg1,
                              const Assignment& asg2, const CostMatrix& cost1,
                              const CostMatrix& cost2, const TrainConfig& config) {
  ad::Value loss = ad::scalar(0.0);
  if (seq.correspondence.empty()) return loss;
  const ViewSplit views1 = select_views(asg1, cost1.values, config.view_cap);
  const ViewSplit views2 = select_views(asg2, cost2.values, config.view_cap);

  // Map instance ids to target rows.
  std::map<int, std::size_t> row1, row2;
  for (std::size_t g = 0; g < seq.gt1.instances.size(); ++g) row1[seq.gt1.instances[g].id] = g;
  for (std::size_t g = 0; g < seq.gt2.instances.size(); ++g) row2[seq.gt2.instances[g].id] = g;
  (void)targets1;
  (void)targets2;

  const Index p2 = t2.embeddings->val.rows();
  for (const int id : seq.correspondence) {
    const auto g1 = row1.find(id), g2 = row2.find(id);
    if (g1 == row1.end() || g2 == row2.end()) continue;
    const auto& pos2 = views2.positives[g2->second];
    if (pos2.empty()) continue;
    std::vector<bool> is_pos(static_cast<std::size_t>(p2), false);
    for (const Index p : pos2) is_pos[static_cast<std::size_t>(p)] = true;
    std::vector<Index> neg2;
    for (Index p = 0; p < p2; ++p) {
      if (!is_pos[static_cast<std::size_t>(p)]) neg2.push_back(p);
    }
    ad::Value positives = ad::rows(t2.embeddings, pos2);
    ad::Value negatives = ad::rows(t2.embeddings, neg2);
    if (config.embed_negatives_both_frames) {
      // Frame-1 predictions outside this instance's anchors join the pool.
      const auto& pos1 = views1.positives[g1->second];
      std::vector<bool> is_anchor(static_cast<std::size_t>(t1.embeddings->val.rows()), false);
      for (const Index p : pos1) is_anchor[static_cast<std::size_t>(p)] = true;
      std::vector<Index> neg1;
      for (Index p = 0; p < t1.embeddings->val.rows(); ++p) {
        if (!is_anchor[static_cast<std::size_t>(p)]) neg1.push_back(p);
      }
      if (!neg1.empty()) negatives = ad::vcat(negatives, ad::rows(t1.embeddings, neg1));
    }

    for (const Index anchor : views1.positives[g1->second]) {
      ad::Value a = ad::rows(t1.embeddings, {anchor});
      loss = ad::add(loss, embed_loss(a, positives, negatives,
                                      config.embed_average_positives
                                          ? PositiveAggregation::per_positive_mean
                                          : PositiveAggregation::numerator_sum));
    }
  }
  return loss;
}

struct SlotOutcome {
  bool labeled = false;
  Scalar supervised = 0;
  Scalar embedding = 0;
  Scalar unsupervised = 0;
  Scalar total = 0;
  std::vector<Mat> grads;
  FilterDiagnostics diag;
  bool has_diag = false;
  std::vector<Scalar> weak_scores;
  std::vector<BankEntry> bank_candidates;
};

std::vector<SeqInstance> base_truth_of(const DatasetCache& data, std::size_t idx) {
  std::vector<SeqInstance> truth;
  for (std::size_t i = 0; i < data.gt_masks[idx].size(); ++i) {
    SeqInstance inst;
    inst.id = static_cast<int>(i);
    inst.label = data.gt_labels[idx][i];
    inst.mask = data.gt_masks[idx][i];
    inst.box = mask_to_box(inst.mask);
    truth.push_back(std::move(inst));
  }
  return truth;
}

}  // namespace

TrainResult train(const TrainConfig& config_in, const DatasetCache& data,
                  const std::vector<int>& labeled_ids, const std::vector<int>& unlabeled_ids,
                  const std::string& out_dir, const DatasetCache* eval_data) {
  TrainConfig config = config_in;
  config.filter_schedule.total_steps = config.total_steps;
  config.validate();
  if (labeled_ids.empty()) {
    throw ConfigError("train: empty labeled split, instance bank cannot be built");
  }
  if (config.model.input_h != data.height || config.model.input_w != data.width) {
    throw ConfigError("train: dataset cache resolution does not match model config");
  }

  // The instance bank is built from ground-truth cutouts of the labeled
  // split only.
  std::vector<LabeledImage> labeled_images;
  std::vector<std::size_t> labeled_idx, unlabeled_idx;
  for (const int id : labeled_ids) {
    const std::size_t idx = data.index_of(id);
    labeled_idx.push_back(idx);
    LabeledImage li;
    li.image = data.images[idx];
    li.masks = data.gt_masks[idx];
    li.labels = data.gt_labels[idx];
    li.source_id = std::to_string(id);
    labeled_images.push_back(std::move(li));
  }
  for (const int id : unlabeled_ids) unlabeled_idx.push_back(data.index_of(id));
  InstanceBank bank = build_bank(labeled_images);
  const std::size_t initial_bank_size = bank.size();

  SegModel model(config.model, config.seed);
  nn::AdamW optimizer;
  optimizer.lr = config.learning_rate;
  optimizer.weight_decay = config.weight_decay;

  const int n_unlabeled_slots = unlabeled_idx.empty() ? 0 : config.unlabeled_per_step;
  const int slots = config.labeled_per_step + n_unlabeled_slots;
  unsigned n_threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                          : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(slots));

  TrainResult result{std::move(model), {}, {}};
  RunReport& report = result.report;

  const bool want_embed = config.loss_weights.lambda3 != 0.0;
  const Index h = data.height, w = data.width;

  for (long step = 0; step < config.total_steps; ++step) {
    // Data order is a pure function of (seed, step).
    Rng pick_rng(config.seed, 0xda7aULL, static_cast<std::uint64_t>(step));
    std::vector<std::size_t> slot_image(static_cast<std::size_t>(slots));
    std::vector<bool> slot_labeled(static_cast<std::size_t>(slots));
    for (int s = 0; s < config.labeled_per_step; ++s) {
      slot_image[static_cast<std::size_t>(s)] = labeled_idx[static_cast<std::size_t>(
          pick_rng.uniform_int(0, static_cast<std::int64_t>(labeled_idx.size()) - 1))];
      slot_labeled[static_cast<std::size_t>(s)] = true;
    }
    for (int s = 0; s < n_unlabeled_slots; ++s) {
      slot_image[static_cast<std::size_t>(config.labeled_per_step + s)] =
          unlabeled_idx[static_cast<std::size_t>(
              pick_rng.uniform_int(0, static_cast<std::int64_t>(unlabeled_idx.size()) - 1))];
      slot_labeled[static_cast<std::size_t>(config.labeled_per_step + s)] = false;
    }

    std::vector<SlotOutcome> outcomes(static_cast<std::size_t>(slots));
    std::atomic<int> next_slot{0};
    auto worker = [&]() {
      for (;;) {
        const int s = next_slot.fetch_add(1);
        if (s >= slots) return;
        SlotOutcome& out = outcomes[static_cast<std::size_t>(s)];
        out.labeled = slot_labeled[static_cast<std::size_t>(s)];
        const std::size_t img_idx = slot_image[static_cast<std::size_t>(s)];
        Rng rng(config.seed, static_cast<std::uint64_t>(step) * 1000003ULL,
                static_cast<std::uint64_t>(s) + 1);

        const std::vector<SeqInstance> base_truth =
            out.labeled ? base_truth_of(data, img_idx) : std::vector<SeqInstance>{};
        PseudoSequence seq = make_sequence(data.images[img_idx], base_truth, bank,
                                           config.augmentation, config.synthesis,
                                           config.placement, rng);

        auto leaves = result.model.make_leaves(true);
        SampleLossTerms terms;
        terms.labeled = out.labeled;

        const TargetSet targets1 = frame_targets(seq.gt1, h, w);
        const TargetSet targets2 = frame_targets(seq.gt2, h, w);

        TracedPrediction t1 = result.model.forward_traced(seq.x1, leaves);
        CostMatrix cost1;
        Assignment asg1;
        if (targets1.count() > 0) {
          cost1 = pairwise_cost(t1.detach(), targets1, config.loss_weights);
          asg1 = ot_assign(cost1, config.ot_k);
        } else {
          asg1.prediction_count = t1.class_scores->val.rows();
        }

        const bool need_x2 = want_embed || out.labeled;
        TracedPrediction t2;
        CostMatrix cost2;
        Assignment asg2;
        if (need_x2) {
          t2 = result.model.forward_traced(seq.x2, leaves);
          if (targets2.count() > 0) {
            cost2 = pairwise_cost(t2.detach(), targets2, config.loss_weights);
            asg2 = ot_assign(cost2, config.ot_k);
          } else {
            asg2.prediction_count = t2.class_scores->val.rows();
          }
        }

        if (out.labeled) {
          // Supervised path over both frames of the synthesized pair.
          ad::Value ls1 = supervised_loss(t1, targets1, asg1, config.loss_weights);
          ad::Value ls2 = supervised_loss(t2, targets2, asg2, config.loss_weights);
          terms.supervised = ad::scale(ad::add(ls1, ls2), 0.5);

          if (config.grow_bank) {
            // Instances the model already segments well join the bank
            // (appended later on the main thread, in slot order).
            const PredictionBatch det = t1.detach();
            std::vector<BinaryMask> pred_masks;
            for (Index p = 0; p < det.count(); ++p) {
              Arr soft(h, w);
              for (Index v = 0; v < h; ++v) {
                for (Index u = 0; u < w; ++u) soft(v, u) = det.masks(p, v * w + u);
              }
              pred_masks.push_back(binarize(soft, 0.5));
            }
            for (const auto& inst : seq.gt1.instances) {
              Scalar best_iou = 0;
              for (const auto& pm : pred_masks) {
                if (!pm.empty()) best_iou = std::max(best_iou, mask_iou(pm, inst.mask));
              }
              if (best_iou >= config.grow_bank_iou) {
                LabeledImage li;
                li.image = seq.x1;
                li.masks = {inst.mask};
                li.labels = {inst.label};
                li.source_id = "grown@" + std::to_string(step);
                InstanceBank grown = build_bank({li});
                out.bank_candidates.push_back(std::move(grown.entries[0]));
              }
            }
          }
        } else {
          // Weak branch: detached pseudo-label source.
          const PredictionBatch weak = result.model.forward_no_grad(seq.x1);
          for (Index p = 0; p < weak.count(); ++p) {
            out.weak_scores.push_back(weak.class_scores.row(p).maxCoeff());
          }
          const PseudoLabelSet pseudo =
              build_pseudo_labels(weak, step, config.filter_schedule, config.use_m2b,
                                  config.use_mlm, h, w, &out.diag, config.mask_gamma_override);
          out.has_diag = true;

          TracedPrediction t3 = result.model.forward_traced(seq.x3, leaves);
          if (pseudo.count() > 0) {
            const TargetSet ptargets = to_target_set(pseudo, h, w);
            const CostMatrix cost_u = pairwise_cost(t3.detach(), ptargets, config.loss_weights);
            const Assignment asg_u = ot_assign(cost_u, config.ot_k);
            terms.unsupervised = unsupervised_loss(t3, ptargets, asg_u, config.loss_weights);
          } else {
            // Background-only class term.
            terms.unsupervised = class_loss(
                t3.class_scores,
                std::vector<int>(static_cast<std::size_t>(t3.class_scores->val.rows()), -1));
          }
        }

        if (want_embed && need_x2 && targets1.count() > 0 && targets2.count() > 0) {
          terms.embedding = sequence_embed_loss(seq, t1, t2, targets1, targets2, asg1, asg2,
                                                cost1, cost2, config);
        }

        ad::Value item_total = total_loss({terms}, config.loss_weights);
        out.total = ad::item(item_total);
        out.supervised = terms.supervised ? ad::item(terms.supervised) : 0.0;
        out.embedding = terms.embedding ? ad::item(terms.embedding) : 0.0;
        out.unsupervised = terms.unsupervised ? ad::item(terms.unsupervised) : 0.0;
        ad::backward(item_total);

        out.grads.reserve(leaves.size());
        for (const auto& leaf : leaves) {
          out.grads.push_back(leaf->grad.size() != 0
                                  ? leaf->grad
                                  : Mat::Zero(leaf->val.rows(), leaf->val.cols()));
        }
      }
    };

    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }

    // Fixed-order reduction keeps training bit-reproducible.
    std::vector<Mat> grads = result.model.params().zeros_like();
    StepLoss losses;
    losses.step = step;
    for (const auto& out : outcomes) {
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += out.grads[i];
      losses.total += out.total;
      losses.supervised += out.supervised;
      losses.embedding += out.embedding;
      losses.unsupervised += out.unsupervised;
    }
    const Scalar lr_scale = step >= config.decay_step ? config.decay_factor : 1.0;
    losses.lr = config.learning_rate * lr_scale;
    optimizer.step(result.model.params(), grads, lr_scale);

    result.loss_trajectory.push_back(losses.total);
    if (step % config.log_interval == 0 || step + 1 == config.total_steps) {
      report.losses.push_back(losses);
    }
    for (int s = 0; s < slots; ++s) {
      const auto& out = outcomes[static_cast<std::size_t>(s)];
      if (out.has_diag) report.filter_diags.push_back(out.diag);
      for (const Scalar sc : out.weak_scores) report.score_trace.push_back({step, s, sc});
      if (config.grow_bank && bank.size() < 8 * initial_bank_size) {
        for (const auto& entry : out.bank_candidates) bank.entries.push_back(entry);
      }
    }

    const bool at_checkpoint =
        (step + 1) % config.checkpoint_interval == 0 || step + 1 == config.total_steps;
    if (at_checkpoint) {
      if (eval_data) {
        report.ap_history.emplace_back(step + 1, evaluate_model(result.model, *eval_data));
      }
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        result.model.save((fs::path(out_dir) / ("ckpt_" + std::to_string(step + 1) + ".bin")).string());
      }
    }
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    result.model.save((fs::path(out_dir) / "model.ckpt").string());
    {
      std::ofstream cfg(fs::path(out_dir) / "config.txt");
      cfg << dump_train_config(config);
    }
    {
      std::ofstream csv(fs::path(out_dir) / "losses.csv");
      csv << "step,lr,total,supervised,embedding,unsupervised\n";
      for (const auto& l : report.losses) {
        csv << l.step << "," << l.lr << "," << l.total << "," << l.supervised << ","
            << l.embedding << "," << l.unsupervised << "\n";
      }
    }
    {
      std::ofstream csv(fs::path(out_dir) / "filter.csv");
      csv << "step,gamma,p,survivors,class_retained,retained,dropped_empty_mask\n";
      for (const auto& d : report.filter_diags) {
        csv << d.step << "," << d.gamma << "," << d.p << "," << d.survivors << ","
            << d.class_retained << "," << d.retained << "," << d.dropped_empty_mask << "\n";
      }
    }
    {
      std::ofstream csv(fs::path(out_dir) / "trace.csv");
      csv << "step,slot,score\n";
      for (const auto& row : report.score_trace) {
        csv << row.step << "," << row.slot << "," << row.score << "\n";
      }
    }
    {
      std::ofstream csv(fs::path(out_dir) / "ap.csv");
      csv << "step,ap,ap50,ap75\n";
      for (const auto& [s, ap] : report.ap_history) {
        csv << s << "," << ap.ap << "," << ap.ap50 << "," << ap.ap75 << "\n";
      }
    }
  }
  return result;
}

std::vector<MaskPrediction> predict_image(const SegModel& model, const DatasetCache& data,
                                          std::size_t index, Scalar mask_threshold,
                                          Scalar score_floor, Index out_h, Index out_w) {
  if (index >= data.images.size()) throw InvalidInputError("predict_image: index out of range");
  if (out_h <= 0) out_h = data.height;
  if (out_w <= 0) out_w = data.width;
  const PredictionBatch pred = model.forward(data.images[index]);
  const Index h = data.height, w = data.width;

  std::vector<MaskPrediction> out;
  for (Index p = 0; p < pred.count(); ++p) {
    Index arg = 0;
    const Scalar score = pred.class_scores.row(p).maxCoeff(&arg);
    if (score < score_floor) continue;
    Arr soft(h, w);
    for (Index v = 0; v < h; ++v) {
      for (Index u = 0; u < w; ++u) soft(v, u) = pred.masks(p, v * w + u);
    }
    BinaryMask m = binarize(soft, mask_threshold);
    if (m.empty()) continue;
    if (out_h != h || out_w != w) m = resize_nearest(m, out_h, out_w);
    if (m.empty()) continue;
    MaskPrediction mp;
    mp.image_id = data.ids[index];
    mp.category_id = data.category_ids.empty() ? 1
                                               : data.category_ids[static_cast<std::size_t>(arg)];
    mp.score = score;
    mp.mask = rle_encode(m);
    out.push_back(std::move(mp));
  }
  return out;
}

ApResult evaluate_model(const SegModel& model, const DatasetCache& data, Scalar mask_threshold,
                        Scalar score_floor) {
  AnnotationSet gt;
  for (const int cat : data.category_ids) {
    gt.categories.push_back(CategoryRecord{cat, "c" + std::to_string(cat)});
  }
  if (gt.categories.empty()) gt.categories.push_back(CategoryRecord{1, "object"});
  int ann_id = 1;
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    gt.images.push_back(ImageRecord{data.ids[i], "", data.height, data.width});
    for (std::size_t g = 0; g < data.gt_masks[i].size(); ++g) {
      AnnotationRecord ann;
      ann.id = ann_id++;
      ann.image_id = data.ids[i];
      ann.category_id =
          data.category_ids.empty()
              ? 1
              : data.category_ids[static_cast<std::size_t>(data.gt_labels[i][g])];
      ann.bbox = mask_to_box(data.gt_masks[i][g]);
      ann.mask = rle_encode(data.gt_masks[i][g]);
      gt.annotations.push_back(std::move(ann));
    }
  }

  std::vector<MaskPrediction> preds;
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    auto img_preds = predict_image(model, data, i, mask_threshold, score_floor);
    for (auto& p : img_preds) preds.push_back(std::move(p));
  }
  return evaluate_ap(preds, gt);
}

AblationRow median_row(std::string name, std::vector<ApResult> per_seed) {
  AblationRow row;
  row.name = std::move(name);
  row.per_seed = std::move(per_seed);
  std::vector<ApResult> sorted = row.per_seed;
  std::sort(sorted.begin(), sorted.end(),
            [](const ApResult& a, const ApResult& b) { return a.ap < b.ap; });
  row.median = sorted.empty() ? ApResult{} : sorted[sorted.size() / 2];
  return row;
}

namespace {

void write_ablation_csv(const std::string& out_dir, const std::string& name,
                        const std::vector<AblationRow>& rows) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / name);
  csv << "variant,median_ap,median_ap50,median_ap75";
  std::size_t max_seeds = 0;
  for (const auto& r : rows) max_seeds = std::max(max_seeds, r.per_seed.size());
  for (std::size_t i = 0; i < max_seeds; ++i) csv << ",ap_seed" << i;
  csv << "\n";
  for (const auto& r : rows) {
    csv << r.name << "," << r.median.ap << "," << r.median.ap50 << "," << r.median.ap75;
    for (const auto& ap : r.per_seed) csv << "," << ap.ap;
    csv << "\n";
  }
}

ApResult run_variant(const TrainConfig& cfg, const DatasetCache& train_data,
                     const std::vector<int>& labeled_ids, const std::vector<int>& unlabeled_ids,
                     const DatasetCache& test_data) {
  TrainResult res = train(cfg, train_data, labeled_ids, unlabeled_ids);
  return evaluate_model(res.model, test_data);
}

}  // namespace

std::vector<AblationRow> ablate_filters(const TrainConfig& base, const DatasetCache& train_data,
                                        const std::vector<int>& labeled_ids,
                                        const std::vector<int>& unlabeled_ids,
                                        const DatasetCache& test_data,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& out_dir) {
  const FilterMode modes[] = {FilterMode::threshold_only, FilterMode::quantile_only,
                              FilterMode::cascade_tq, FilterMode::cascade_qt};
  std::vector<AblationRow> rows;
  for (const FilterMode mode : modes) {
    std::vector<ApResult> per_seed;
    for (const std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.filter_schedule.mode = mode;
      cfg.seed = seed;
      per_seed.push_back(run_variant(cfg, train_data, labeled_ids, unlabeled_ids, test_data));
    }
    rows.push_back(median_row(to_string(mode), std::move(per_seed)));
  }
  write_ablation_csv(out_dir, "ablate_filters.csv", rows);
  return rows;
}

std::vector<AblationRow> ablate_pseudo_box(const TrainConfig& base,
                                           const DatasetCache& train_data,
                                           const std::vector<int>& labeled_ids,
                                           const std::vector<int>& unlabeled_ids,
                                           const DatasetCache& test_data,
                                           const std::vector<std::uint64_t>& seeds,
                                           const std::string& out_dir) {
  const Scalar gammas[] = {0.5, 0.6, 0.7};
  struct Variant {
    const char* name;
    bool m2b, mlm;
  };
  const Variant variants[] = {{"pseudo_box", false, false}, {"m2b", true, false},
                              {"m2b_mlm", true, true}};
  std::vector<AblationRow> rows;
  for (const Scalar gamma : gammas) {
    for (const auto& variant : variants) {
      std::vector<ApResult> per_seed;
      for (const std::uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.mask_gamma_override = gamma;
        cfg.use_m2b = variant.m2b;
        cfg.use_mlm = variant.mlm;
        cfg.seed = seed;
        per_seed.push_back(run_variant(cfg, train_data, labeled_ids, unlabeled_ids, test_data));
      }
      std::ostringstream name;
      name << variant.name << "@gamma" << gamma;
      rows.push_back(median_row(name.str(), std::move(per_seed)));
    }
  }
  write_ablation_csv(out_dir, "ablate_pseudo_box.csv", rows);
  return rows;
}

std::vector<TraceRow> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_trace: cannot open " + path);
  std::vector<TraceRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRow row;
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    row.step = std::stol(field);
    std::getline(ls, field, ',');
    row.slot = std::stoi(field);
    std::getline(ls, field, ',');
    row.score = std::stod(field);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::array<Scalar, 3> bucket_color(std::size_t bucket, std::size_t buckets) {
  const Scalar t = buckets <= 1 ? 0.0
                                : static_cast<Scalar>(bucket) / static_cast<Scalar>(buckets - 1);
  return {0.2 + 0.75 * t, 0.25, 0.9 - 0.75 * t};  // blue -> red
}

void render_histogram_png(const std::string& path,
                          const std::vector<std::vector<long>>& bucket_bins, int bins) {
  const Index width = 520, height = 320, margin = 20;
  ImageRGB img(height, width);
  for (auto& c : img.ch) c.setConstant(1.0);

  long max_count = 1;
  for (const auto& b : bucket_bins) {
    for (const long c : b) max_count = std::max(max_count, c);
  }
  const Scalar plot_w = static_cast<Scalar>(width - 2 * margin);
  const Scalar plot_h = static_cast<Scalar>(height - 2 * margin);

  for (std::size_t bucket = 0; bucket < bucket_bins.size(); ++bucket) {
    const auto color = bucket_color(bucket, bucket_bins.size());
    for (int b = 0; b < bins; ++b) {
      const long count = bucket_bins[bucket][static_cast<std::size_t>(b)];
      if (count == 0) continue;
      const Index x0 = margin + static_cast<Index>(plot_w * b / bins);
      const Index x1 = margin + static_cast<Index>(plot_w * (b + 1) / bins) - 1;
      const Index bar =
          static_cast<Index>(plot_h * static_cast<Scalar>(count) / static_cast<Scalar>(max_count));
      for (Index v = height - margin - bar; v < height - margin; ++v) {
        for (Index x = x0; x <= x1; ++x) {
          for (int c = 0; c < 3; ++c) {
            img.ch[c](v, x) = 0.55 * img.ch[c](v, x) + 0.45 * color[static_cast<std::size_t>(c)];
          }
        }
      }
    }
  }
  // Axis lines.
  for (Index x = margin; x < width - margin; ++x) {
    for (int c = 0; c < 3; ++c) img.ch[c](height - margin, x) = 0.0;
  }
  for (Index v = margin; v <= height - margin; ++v) {
    for (int c = 0; c < 3; ++c) img.ch[c](v, margin) = 0.0;
  }
  write_png(path, img);
}

}  // namespace

DensityReport report_density(const std::vector<TraceRow>& trace, const FilterSchedule& schedule,
                             const std::vector<Scalar>& a0_values, const std::string& out_dir,
                             int bins) {
  schedule.validate();
  if (bins < 1) throw InvalidInputError("report_density: bins must be >= 1");

  // Group per (step, slot): each group is one weak-branch forward.
  std::map<std::pair<long, int>, std::vector<Scalar>> groups;
  long max_step = 0;
  for (const auto& row : trace) {
    groups[{row.step, row.slot}].push_back(row.score);
    max_step = std::max(max_step, row.step);
  }
  const std::size_t buckets = static_cast<std::size_t>(max_step / 1000) + 1;

  DensityReport report;
  report.a0_values = a0_values;
  report.bins = bins;
  for (const Scalar a0 : a0_values) {
    FilterSchedule sched = schedule;
    sched.a0 = a0;
    std::vector<std::vector<long>> bucket_bins(buckets,
                                               std::vector<long>(static_cast<std::size_t>(bins), 0));
    for (const auto& [key, scores] : groups) {
      const long t = std::min(key.first, sched.total_steps);
      const Scalar gamma = gamma_at(sched, t);
      const Scalar p = quantile_prob_at(sched, t);
      const auto retained = cascade_filter(scores, gamma, p, sched.mode);
      const std::size_t bucket = static_cast<std::size_t>(key.first / 1000);
      for (const Index i : retained) {
        const Scalar score = scores[static_cast<std::size_t>(i)];
        int bin = static_cast<int>(score * bins);
        bin = std::clamp(bin, 0, bins - 1);
        ++bucket_bins[bucket][static_cast<std::size_t>(bin)];
      }
    }
    report.counts.push_back(std::move(bucket_bins));
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < a0_values.size(); ++i) {
      std::ostringstream stem;
      stem << "density_a0_" << a0_values[i];
      std::ofstream csv(fs::path(out_dir) / (stem.str() + ".csv"));
      csv << "bucket,bin_lo,bin_hi,count\n";
      for (std::size_t bucket = 0; bucket < report.counts[i].size(); ++bucket) {
        for (int b = 0; b < bins; ++b) {
          csv << bucket << "," << static_cast<Scalar>(b) / bins << ","
              << static_cast<Scalar>(b + 1) / bins << ","
              << report.counts[i][bucket][static_cast<std::size_t>(b)] << "\n";
        }
      }
      render_histogram_png((fs::path(out_dir) / (stem.str() + ".png")).string(),
                           report.counts[i], bins);
    }
  }
  return report;
}

DensityReport report_density_file(const std::string& trace_csv, const FilterSchedule& schedule,
                                  const std::vector<Scalar>& a0_values, const std::string& out_dir,
                                  int bins) {
  return report_density(load_trace(trace_csv), schedule, a0_values, out_dir, bins);
}

}  // namespace pseqseg
