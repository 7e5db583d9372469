// Command-line front end: every subcommand is a thin wrapper over one
// pipeline operation. Exit codes: 0 success, 2 usage error, 1 stage failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tagseg/attention.hpp"
#include "tagseg/checkpoint.hpp"
#include "tagseg/errors.hpp"
#include "tagseg/rng.hpp"
#include "tagseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tagseg;

namespace {

struct ScheduleFlags {
  std::optional<double> learning_rate, momentum;
  std::optional<int> batch, iterations;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", learning_rate, "learning rate");
    cmd->add_option("--momentum", momentum, "momentum");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--iterations", iterations, "SGD iterations");
  }
  TrainSchedule apply(TrainSchedule s) const {
    if (learning_rate) s.learning_rate = *learning_rate;
    if (momentum) s.momentum = *momentum;
    if (batch) s.batch_size = *batch;
    if (iterations) s.iterations = *iterations;
    return s;
  }
};

class InMemoryClassifierData : public ClassifierData {
 public:
  explicit InMemoryClassifierData(SplitData data) : data_(std::move(data)) {}
  std::size_t size() const override { return data_.size(); }
  ClassifierSample sample(std::size_t i) const override {
    return ClassifierSample{data_.image(i), data_.records[i].tag};
  }

 private:
  SplitData data_;
};

int max_tag(const DatasetManifest& manifest) {
  int k = 0;
  for (const auto& rec : manifest.records) {
    k = std::max(k, rec.tag);
  }
  return k;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tagseg: pseudo ground truth and segmentation from noisily tagged images"};
  app.require_subcommand(1);

  // ---- synth-data ----
  SynthSpec synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "generate the synthetic noisy benchmark");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--classes", synth.class_count, "number of classes");
  synth_cmd->add_option("--size", synth.image_size, "image side length");
  synth_cmd->add_option("--train", synth.train_count, "attention-train count");
  synth_cmd->add_option("--pool", synth.pool_count, "finetune-pool count");
  synth_cmd->add_option("--eval", synth.eval_count, "eval count");
  synth_cmd->add_option("--noise", synth.noise_rate, "tag noise rate");
  synth_cmd->add_option("--distractors", synth.distractor_rate, "distractor rate");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--format", synth.image_format, "ppm or png");

  // ---- train-classifier ----
  std::string tc_manifest, tc_out;
  std::uint64_t tc_seed = 0;
  ScheduleFlags tc_flags;
  auto* tc_cmd = app.add_subcommand("train-classifier", "train a classifier on a manifest split");
  tc_cmd->add_option("--manifest", tc_manifest, "manifest.tsv path")->required();
  tc_cmd->add_option("--out", tc_out, "checkpoint path")->required();
  tc_cmd->add_option("--seed", tc_seed, "seed");
  tc_flags.attach(tc_cmd);

  // ---- filter ----
  std::string fl_manifest, fl_classifier, fl_out, fl_report;
  int fl_rule = 1;
  auto* fl_cmd = app.add_subcommand("filter", "apply one noisy-tag filter rule");
  fl_cmd->add_option("--manifest", fl_manifest, "manifest.tsv path")->required();
  fl_cmd->add_option("--classifier", fl_classifier, "classifier checkpoint")->required();
  fl_cmd->add_option("--rule", fl_rule, "rule 1, 2 or 3")->required();
  fl_cmd->add_option("--out", fl_out, "surviving manifest path")->required();
  fl_cmd->add_option("--report", fl_report, "per-image report path");

  // ---- attention ----
  std::string at_image, at_classifier, at_out;
  int at_class = 1;
  double at_l1 = 1.0, at_l2 = 1.0;
  auto* at_cmd = app.add_subcommand("attention", "export attention maps for one image");
  at_cmd->add_option("--image", at_image, "image file")->required();
  at_cmd->add_option("--classifier", at_classifier, "classifier checkpoint")->required();
  at_cmd->add_option("--class", at_class, "class id 1..K")->required();
  at_cmd->add_option("--out", at_out, "output directory")->required();
  at_cmd->add_option("--lambda1", at_l1, "forward weight");
  at_cmd->add_option("--lambda2", at_l2, "backward-product weight");

  // ---- pseudo-gt ----
  std::string pg_manifest, pg_classifier, pg_out, pg_variant = "fused-smoothed";
  double pg_d1 = 0.65, pg_d2 = 0.5;
  std::uint64_t pg_seed = 0;
  auto* pg_cmd = app.add_subcommand("pseudo-gt", "attention pseudo ground truth for a split");
  pg_cmd->add_option("--manifest", pg_manifest, "manifest.tsv path")->required();
  pg_cmd->add_option("--classifier", pg_classifier, "classifier checkpoint")->required();
  pg_cmd->add_option("--out", pg_out, "mask output directory")->required();
  pg_cmd->add_option("--variant", pg_variant,
                     "forward | backward | fused | fused-smoothed");
  pg_cmd->add_option("--delta1", pg_d1, "class threshold");
  pg_cmd->add_option("--delta2", pg_d2, "background threshold");
  pg_cmd->add_option("--seed", pg_seed, "segment seed");

  // ---- train-seg ----
  std::string ts_manifest, ts_masks, ts_out;
  std::uint64_t ts_seed = 0;
  ScheduleFlags ts_flags;
  auto* ts_cmd = app.add_subcommand("train-seg", "train a segmenter on pseudo masks");
  ts_cmd->add_option("--manifest", ts_manifest, "manifest.tsv path")->required();
  ts_cmd->add_option("--masks", ts_masks, "directory of pseudo masks (by image stem)")->required();
  ts_cmd->add_option("--out", ts_out, "checkpoint path")->required();
  ts_cmd->add_option("--seed", ts_seed, "seed");
  ts_flags.attach(ts_cmd);

  // ---- finetune ----
  std::string fn_manifest, fn_segmenter, fn_classifier, fn_out, fn_masks;
  double fn_mu = 0.4, fn_d1 = 0.65, fn_d2 = 0.5;
  std::uint64_t fn_seed = 0;
  ScheduleFlags fn_flags;
  auto* fn_cmd = app.add_subcommand("finetune", "gated fine-tuning on the pool split");
  fn_cmd->add_option("--manifest", fn_manifest, "manifest.tsv path")->required();
  fn_cmd->add_option("--segmenter", fn_segmenter, "initial segmenter checkpoint")->required();
  fn_cmd->add_option("--classifier", fn_classifier, "classifier checkpoint")->required();
  fn_cmd->add_option("--out", fn_out, "fine-tuned checkpoint path")->required();
  fn_cmd->add_option("--masks", fn_masks, "optional directory to dump the accepted masks");
  fn_cmd->add_option("--mu", fn_mu, "gate threshold");
  fn_cmd->add_option("--delta1", fn_d1, "class threshold");
  fn_cmd->add_option("--delta2", fn_d2, "background threshold");
  fn_cmd->add_option("--seed", fn_seed, "seed");
  fn_flags.attach(fn_cmd);

  // ---- eval ----
  std::string ev_pred, ev_gt, ev_manifest, ev_segmenter;
  int ev_classes = 0;
  auto* ev_cmd = app.add_subcommand("eval", "mIoU of predictions against ground truth");
  ev_cmd->add_option("--pred", ev_pred, "directory of predicted masks");
  ev_cmd->add_option("--gt", ev_gt, "directory of ground-truth masks");
  ev_cmd->add_option("--manifest", ev_manifest, "manifest.tsv (evaluates eval split)");
  ev_cmd->add_option("--segmenter", ev_segmenter, "segmenter checkpoint");
  ev_cmd->add_option("--classes", ev_classes, "class count (default: inferred)");

  // ---- run-all ----
  std::string ra_config;
  std::vector<std::string> ra_set;
  std::optional<std::uint64_t> ra_seed;
  std::optional<std::string> ra_out;
  auto* ra_cmd = app.add_subcommand("run-all", "execute the whole pipeline");
  ra_cmd->add_option("--config", ra_config, "config file");
  ra_cmd->add_option("--seed", ra_seed, "override the config seed");
  ra_cmd->add_option("--out", ra_out, "override the output directory");
  ra_cmd->add_option("--set", ra_set, "extra key=value overrides")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (*synth_cmd) {
      synth_generate(synth, synth_out);
      std::cout << "wrote " << synth_out << "/manifest.tsv\n";
      return 0;
    }

    if (*tc_cmd) {
      const DatasetManifest manifest = load_manifest(tc_manifest);
      const SplitData data = load_split(manifest, Split::kAttentionTrain);
      TrainSchedule schedule = tc_flags.apply(TrainSchedule{});
      schedule.seed = derive_seed(tc_seed, "cli-classifier-batches");
      TrainStats stats;
      const Network net = train_classifier(
          make_classifier(3, max_tag(manifest), derive_seed(tc_seed, "cli-classifier-init")),
          InMemoryClassifierData(data), schedule, &stats);
      save_checkpoint(net, tc_out);
      std::cout << "probe loss " << stats.probe_loss_before << " -> " << stats.probe_loss_after
                << "\n";
      return 0;
    }

    if (*fl_cmd) {
      const DatasetManifest manifest = load_manifest(fl_manifest);
      const SplitData data = load_split(manifest, Split::kAttentionTrain);
      const Network classifier = load_checkpoint(fl_classifier);
      std::vector<std::size_t> active(data.size());
      for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;
      const auto [kept, report] = filter_stage(data, active, classifier, fl_rule);
      DatasetManifest out;
      out.base_dir = manifest.base_dir;
      const auto train_records = manifest.split_records(Split::kAttentionTrain);
      for (const std::size_t i : kept) {
        out.records.push_back(train_records[i]);
      }
      for (const auto& rec : manifest.records) {
        if (rec.split != Split::kAttentionTrain) {
          out.records.push_back(rec);
        }
      }
      save_manifest(out, fl_out);
      if (!fl_report.empty()) {
        std::ofstream rep(fl_report, std::ios::trunc);
        rep << "tagseg-report\tv1\n";
        for (const auto& d : report.decisions) {
          rep << d.image_path << '\t' << d.tag << '\t' << d.p_tag << '\t'
              << (d.kept ? "kept" : "dropped") << "\n";
        }
      }
      std::cout << "rule " << fl_rule << ": kept " << report.kept_count << "/"
                << report.input_count << "\n";
      return 0;
    }

    if (*at_cmd) {
      const Network classifier = load_checkpoint(at_classifier);
      const FeatureMap image = io::load_image(at_image);
      const AttentionBundle bundle = compute_attention(classifier, image, at_class, at_l1, at_l2);
      fs::create_directories(at_out);
      const fs::path out(at_out);
      io::save_grayscale(minmax_normalize(bundle.forward_map.map), out / "forward.pgm");
      io::save_grayscale(minmax_normalize(bundle.shallow.map), out / "backward_shallow.pgm");
      io::save_grayscale(minmax_normalize(bundle.deep.map), out / "backward_deep.pgm");
      io::save_grayscale(bundle.fused.map, out / "fused.pgm");
      io::save_raw_f64(bundle.forward_map.map, out / "forward.f64");
      io::save_raw_f64(bundle.shallow.map, out / "backward_shallow.f64");
      io::save_raw_f64(bundle.deep.map, out / "backward_deep.f64");
      io::save_raw_f64(bundle.fused.map, out / "fused.f64");
      std::cout << "wrote attention maps to " << at_out << "\n";
      return 0;
    }

    if (*pg_cmd) {
      const DatasetManifest manifest = load_manifest(pg_manifest);
      const SplitData data = load_split(manifest, Split::kAttentionTrain);
      const Network classifier = load_checkpoint(pg_classifier);
      PseudoGtParams params;
      params.delta1 = pg_d1;
      params.delta2 = pg_d2;
      if (pg_variant == "forward") params.variant = AttentionVariant::kForwardOnly;
      else if (pg_variant == "backward") params.variant = AttentionVariant::kBackwardOnly;
      else if (pg_variant == "fused") params.variant = AttentionVariant::kFused;
      else if (pg_variant == "fused-smoothed") params.variant = AttentionVariant::kFusedSmoothed;
      else throw config_error("unknown variant '" + pg_variant + "'");
      fs::create_directories(pg_out);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const PseudoMask mask =
            attention_pseudo_mask(classifier, data.image(i), data.records[i].tag, params,
                                  derive_seed(pg_seed, "image", i));
        const fs::path stem = fs::path(data.records[i].image_path).stem();
        io::save_mask(mask.labels, fs::path(pg_out) / (stem.string() + ".pgm"));
      }
      std::cout << "wrote " << data.size() << " masks to " << pg_out << "\n";
      return 0;
    }

    if (*ts_cmd) {
      const DatasetManifest manifest = load_manifest(ts_manifest);
      const SplitData data = load_split(manifest, Split::kAttentionTrain);
      std::vector<SegmenterSample> samples;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const fs::path stem = fs::path(data.records[i].image_path).stem();
        const fs::path mask_path = fs::path(ts_masks) / (stem.string() + ".pgm");
        if (!fs::exists(mask_path)) {
          continue;
        }
        samples.push_back(SegmenterSample{data.image(i), io::load_mask(mask_path)});
      }
      if (samples.empty()) {
        throw std::runtime_error("no (image, mask) pairs found under " + ts_masks);
      }
      TrainSchedule schedule = ts_flags.apply(TrainSchedule{});
      schedule.seed = derive_seed(ts_seed, "cli-segmenter-batches");
      TrainStats stats;
      const Network net = train_segmenter(
          make_segmenter(3, max_tag(manifest), derive_seed(ts_seed, "cli-segmenter-init")),
          VectorSegmenterData(std::move(samples)), schedule, &stats);
      save_checkpoint(net, ts_out);
      std::cout << "probe loss " << stats.probe_loss_before << " -> " << stats.probe_loss_after
                << "\n";
      return 0;
    }

    if (*fn_cmd) {
      const DatasetManifest manifest = load_manifest(fn_manifest);
      const SplitData pool = load_split(manifest, Split::kFinetunePool);
      const Network segmenter = load_checkpoint(fn_segmenter);
      const Network classifier = load_checkpoint(fn_classifier);
      FinetuneParams params;
      params.mu = fn_mu;
      params.delta1 = fn_d1;
      params.delta2 = fn_d2;
      params.seed = derive_seed(fn_seed, "cli-finetune");
      const FinetuneSet set = build_finetune_set(pool, segmenter, classifier, params);
      std::cout << "gate accepted " << set.samples.size() << "/" << set.decisions.size() << "\n";
      if (!fn_masks.empty()) {
        fs::create_directories(fn_masks);
        for (std::size_t i = 0; i < set.samples.size(); ++i) {
          const fs::path stem =
              fs::path(pool.records[set.source_indices[i]].image_path).stem();
          io::save_mask(set.samples[i].mask, fs::path(fn_masks) / (stem.string() + ".pgm"));
        }
      }
      Network tuned = segmenter;
      if (!set.samples.empty()) {
        TrainSchedule schedule = fn_flags.apply(TrainSchedule{0.002, 0.9, 16, 600, 0, 0});
        schedule.seed = derive_seed(fn_seed, "cli-finetune-batches");
        tuned = train_segmenter(segmenter, VectorSegmenterData(set.samples), schedule);
      }
      save_checkpoint(tuned, fn_out);
      return 0;
    }

    if (*ev_cmd) {
      std::vector<LabelImage> preds, gts;
      if (!ev_manifest.empty()) {
        if (ev_segmenter.empty()) {
          throw config_error("eval --manifest requires --segmenter");
        }
        const DatasetManifest manifest = load_manifest(ev_manifest);
        const Network segmenter = load_checkpoint(ev_segmenter);
        for (const auto& rec : manifest.split_records(Split::kEval)) {
          if (rec.truth_path.empty()) {
            throw std::runtime_error("eval record missing truth mask: " + rec.image_path);
          }
          preds.push_back(segment_predict(segmenter, io::load_image(manifest.resolve(rec.image_path))));
          gts.push_back(io::load_mask(manifest.resolve(rec.truth_path)));
        }
        if (ev_classes == 0) {
          ev_classes = max_tag(manifest);
        }
      } else {
        if (ev_pred.empty() || ev_gt.empty()) {
          throw config_error("eval needs either --manifest/--segmenter or --pred/--gt");
        }
        std::vector<fs::path> names;
        for (const auto& entry : fs::directory_iterator(ev_gt)) {
          if (entry.is_regular_file()) {
            names.push_back(entry.path().filename());
          }
        }
        std::sort(names.begin(), names.end());
        if (names.empty()) {
          throw std::runtime_error("no ground-truth masks under " + ev_gt);
        }
        int max_code = 0;
        for (const auto& name : names) {
          gts.push_back(io::load_mask(fs::path(ev_gt) / name));
          preds.push_back(io::load_mask(fs::path(ev_pred) / name));
          for (const int code : gts.back().labels) {
            max_code = std::max(max_code, code);
          }
          for (const int code : preds.back().labels) {
            max_code = std::max(max_code, code);
          }
        }
        if (ev_classes == 0) {
          ev_classes = max_code;
        }
      }
      const IouResult result = mean_iou(preds, gts, ev_classes);
      std::printf("miou\t%.6f\n", result.mean);
      for (int c = 0; c <= ev_classes; ++c) {
        if (result.class_present[c]) {
          std::printf("iou.%d\t%.6f\n", c, result.per_class[c]);
        }
      }
      return 0;
    }

    if (*ra_cmd) {
      PipelineConfig config;
      if (!ra_config.empty()) {
        config = load_config(ra_config);
      }
      if (ra_seed) {
        config.seed = *ra_seed;
      }
      if (ra_out) {
        config.out_dir = *ra_out;
      }
      for (const std::string& kv : ra_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          throw config_error("--set expects key=value, got '" + kv + "'");
        }
        apply_config_entry(config, kv.substr(0, eq), kv.substr(eq + 1));
      }
      const PipelineResult result = run_pipeline(config);
      std::cout << "retained purity " << result.retained_purity << " (input "
                << result.input_purity << ")\n";
      std::cout << "initial miou " << result.initial_eval.mean << "\n";
      if (result.finetuned_segmenter) {
        std::cout << "finetuned miou " << result.finetuned_eval.mean << "\n";
      }
      std::cout << "metrics: " << result.metrics_path.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
