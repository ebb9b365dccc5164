#include "pseqseg/config.hpp"
#include "pseqseg/dataset.hpp"
#include "pseqseg/eval.hpp"
#include "pseqseg/model.hpp"
#include "pseqseg/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace pseqseg;

namespace {

std::string dataset_path(const std::string& data, const std::string& split) {
  if (split.empty()) return data;
  return (fs::path(data) / split).string();
}

TrainConfig config_from_file_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return load_train_config(path);
}

void print_rows(const std::vector<AblationRow>& rows) {
  std::cout << "variant                  AP      AP50    AP75\n";
  for (const auto& r : rows) {
    std::printf("%-22s %7.4f %7.4f %7.4f\n", r.name.c_str(), r.median.ap, r.median.ap50,
                r.median.ap75);
  }
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, int count) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised instance segmentation on pseudo-sequences"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  int gen_n = 100;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  ShapesConfig shapes;
  gen->add_option("--n", gen_n, "Number of images")->required();
  gen->add_option("--seed", gen_seed, "Generator seed")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--height", shapes.height, "Image height");
  gen->add_option("--width", shapes.width, "Image width");
  gen->add_option("--min-instances", shapes.min_instances);
  gen->add_option("--max-instances", shapes.max_instances);

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset split");
  std::string tr_config, tr_data, tr_out = "run";
  double tr_frac = 0.1;
  std::uint64_t tr_seed = 0;
  bool tr_has_seed = false;
  std::string tr_eval_data;
  tr->add_option("--config", tr_config, "Config file (key: value lines)");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--labeled-frac", tr_frac, "Labeled fraction in (0,1]");
  tr->add_option("--seed", tr_seed, "Seed override")->each([&](const std::string&) {
    tr_has_seed = true;
  });
  tr->add_option("--out", tr_out, "Output directory");
  tr->add_option("--eval-data", tr_eval_data, "Optional test split evaluated at checkpoints");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split, ev_pred_out;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--split", ev_split, "Split subdirectory (empty: data root)");
  ev->add_option("--pred-out", ev_pred_out, "Optional prediction JSON output");

  // ablate-filters
  auto* af = app.add_subcommand("ablate-filters", "Filter strategy comparison table");
  std::string af_config, af_data, af_out = "ablate_filters";
  double af_frac = 0.1;
  int af_seeds = 3;
  std::string af_test;
  af->add_option("--config", af_config, "Config file")->required();
  af->add_option("--data", af_data, "Train split directory")->required();
  af->add_option("--test-data", af_test, "Test split directory")->required();
  af->add_option("--labeled-frac", af_frac, "Labeled fraction");
  af->add_option("--seeds", af_seeds, "Seed count (median reported)");
  af->add_option("--out", af_out, "Output directory");

  // ablate-pseudo-box
  auto* ab = app.add_subcommand("ablate-pseudo-box", "Pseudo-box strategy grid");
  std::string ab_config, ab_data, ab_out = "ablate_pseudo_box";
  double ab_frac = 0.1;
  int ab_seeds = 3;
  std::string ab_test;
  ab->add_option("--config", ab_config, "Config file")->required();
  ab->add_option("--data", ab_data, "Train split directory")->required();
  ab->add_option("--test-data", ab_test, "Test split directory")->required();
  ab->add_option("--labeled-frac", ab_frac, "Labeled fraction");
  ab->add_option("--seeds", ab_seeds, "Seed count (median reported)");
  ab->add_option("--out", ab_out, "Output directory");

  // report-density
  auto* rd = app.add_subcommand("report-density", "Confidence density histograms from a trace");
  std::string rd_trace, rd_config, rd_out = "density";
  rd->add_option("--trace", rd_trace, "trace.csv from a training run")->required();
  rd->add_option("--config", rd_config, "Config file for the schedule");
  rd->add_option("--out", rd_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gen_shapes_dataset(gen_out, gen_n, gen_seed, shapes);
      std::cout << "wrote " << gen_n << " images under " << gen_out << "\n";
      return 0;
    }

    if (*tr) {
      TrainConfig config = config_from_file_or_default(tr_config);
      if (tr_has_seed) config.seed = tr_seed;
      DatasetCache data = DatasetCache::load(tr_data, config.model.input_h, config.model.input_w);
      AnnotationSet set = load_annotations((fs::path(tr_data) / "annotations.json").string());
      const auto [labeled, unlabeled] =
          split_labeled(set, SplitSpec{tr_frac, config.seed});
      DatasetCache eval_cache;
      const DatasetCache* eval_ptr = nullptr;
      if (!tr_eval_data.empty()) {
        eval_cache = DatasetCache::load(tr_eval_data, config.model.input_h, config.model.input_w);
        eval_ptr = &eval_cache;
      }
      TrainResult result = train(config, data, labeled, unlabeled, tr_out, eval_ptr);
      std::cout << "final loss " << result.loss_trajectory.back() << "; model saved under "
                << tr_out << "\n";
      if (!result.report.ap_history.empty()) {
        const auto& [s, ap] = result.report.ap_history.back();
        std::cout << "step " << s << " AP " << ap.ap << " AP50 " << ap.ap50 << " AP75 " << ap.ap75
                  << "\n";
      }
      return 0;
    }

    if (*ev) {
      SegModel model = SegModel::load(ev_ckpt);
      const std::string dir = dataset_path(ev_data, ev_split);
      DatasetCache data =
          DatasetCache::load(dir, model.config().input_h, model.config().input_w);
      const ApResult ap = evaluate_model(model, data);
      std::cout << "AP " << ap.ap << " AP50 " << ap.ap50 << " AP75 " << ap.ap75 << "\n";
      if (!ev_pred_out.empty()) {
        std::vector<MaskPrediction> preds;
        AnnotationSet native = load_annotations((fs::path(dir) / "annotations.json").string());
        for (std::size_t i = 0; i < data.ids.size(); ++i) {
          auto img_preds = predict_image(model, data, i, 0.5, 0.05, data.native_h, data.native_w);
          for (auto& p : img_preds) preds.push_back(std::move(p));
        }
        save_predictions(ev_pred_out, preds);
        std::cout << "wrote " << preds.size() << " predictions to " << ev_pred_out << "\n";
      }
      return 0;
    }

    if (*af || *ab) {
      const bool filters = static_cast<bool>(*af);
      const std::string cfg_path = filters ? af_config : ab_config;
      const std::string data_dir = filters ? af_data : ab_data;
      const std::string test_dir = filters ? af_test : ab_test;
      const std::string out_dir = filters ? af_out : ab_out;
      const double frac = filters ? af_frac : ab_frac;
      const int n_seeds = filters ? af_seeds : ab_seeds;

      TrainConfig config = config_from_file_or_default(cfg_path);
      DatasetCache train_data =
          DatasetCache::load(data_dir, config.model.input_h, config.model.input_w);
      DatasetCache test_data =
          DatasetCache::load(test_dir, config.model.input_h, config.model.input_w);
      AnnotationSet set = load_annotations((fs::path(data_dir) / "annotations.json").string());
      const auto [labeled, unlabeled] = split_labeled(set, SplitSpec{frac, config.seed});
      const auto seeds = seed_list(config.seed, n_seeds);
      const auto rows = filters
                            ? ablate_filters(config, train_data, labeled, unlabeled, test_data,
                                             seeds, out_dir)
                            : ablate_pseudo_box(config, train_data, labeled, unlabeled, test_data,
                                                seeds, out_dir);
      print_rows(rows);
      return 0;
    }

    if (*rd) {
      TrainConfig config = config_from_file_or_default(rd_config);
      const std::vector<Scalar> a0_values = {0.7, 0.9, 0.95, 0.99, 0.995};
      const DensityReport report =
          report_density_file(rd_trace, config.filter_schedule, a0_values, rd_out);
      for (std::size_t i = 0; i < report.a0_values.size(); ++i) {
        long total = 0;
        for (const auto& bucket : report.counts[i]) {
          for (const long c : bucket) total += c;
        }
        std::cout << "a0=" << report.a0_values[i] << ": " << total << " retained scores, "
                  << report.counts[i].size() << " buckets\n";
      }
      std::cout << "figures under " << rd_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
