#include "tagseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tagseg/checkpoint.hpp"
#include "tagseg/errors.hpp"
#include "tagseg/parallel.hpp"
#include "tagseg/rng.hpp"

namespace tagseg {

namespace {

constexpr const char* kConfigVersion = "# tagseg-config v1";
constexpr const char* kMetricsVersion = "tagseg-metrics\tv1";
constexpr const char* kReportVersion = "tagseg-report\tv1";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument(value);
    }
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': bad number '" + value + "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument(value);
    }
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': bad integer '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw config_error("config key '" + key + "': bad boolean '" + value + "'");
}

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("[") + stage + "] " + e.what());
  }
}

}  // namespace

void apply_config_entry(PipelineConfig& c, const std::string& key, const std::string& value) {
  using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> kSetters = {
      {"seed", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"data_dir", [](PipelineConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"out_dir", [](PipelineConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"classes", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.class_count = static_cast<int>(parse_int(k, v));
       }},
      {"image_size", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.image_size = static_cast<int>(parse_int(k, v));
       }},
      {"train_count", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.train_count = static_cast<int>(parse_int(k, v));
       }},
      {"pool_count", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.pool_count = static_cast<int>(parse_int(k, v));
       }},
      {"eval_count", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.eval_count = static_cast<int>(parse_int(k, v));
       }},
      {"noise_rate", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.noise_rate = parse_double(k, v);
       }},
      {"distractor_rate", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.synth.distractor_rate = parse_double(k, v);
       }},
      {"image_format", [](PipelineConfig& c, const std::string&, const std::string& v) {
         c.synth.image_format = v;
       }},
      {"delta1", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.delta1 = parse_double(k, v);
       }},
      {"delta2", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.delta2 = parse_double(k, v);
       }},
      {"mu", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.mu = parse_double(k, v);
       }},
      {"lambda1", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.lambda1 = parse_double(k, v);
       }},
      {"lambda2", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.lambda2 = parse_double(k, v);
       }},
      {"segment_count", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segments.target_count = static_cast<int>(parse_int(k, v));
       }},
      {"compactness", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segments.compactness = parse_double(k, v);
       }},
      {"slic_iterations", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segments.iterations = static_cast<int>(parse_int(k, v));
       }},
      {"cls_learning_rate", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.classifier_schedule.learning_rate = parse_double(k, v);
       }},
      {"cls_momentum", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.classifier_schedule.momentum = parse_double(k, v);
       }},
      {"cls_batch", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.classifier_schedule.batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"cls_iterations", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.classifier_schedule.iterations = static_cast<int>(parse_int(k, v));
       }},
      {"seg_learning_rate", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmenter_schedule.learning_rate = parse_double(k, v);
       }},
      {"seg_momentum", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmenter_schedule.momentum = parse_double(k, v);
       }},
      {"seg_batch", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmenter_schedule.batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"seg_iterations", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmenter_schedule.iterations = static_cast<int>(parse_int(k, v));
       }},
      {"ft_learning_rate", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.finetune_schedule.learning_rate = parse_double(k, v);
       }},
      {"ft_momentum", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.finetune_schedule.momentum = parse_double(k, v);
       }},
      {"ft_batch", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.finetune_schedule.batch_size = static_cast<int>(parse_int(k, v));
       }},
      {"ft_iterations", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.finetune_schedule.iterations = static_cast<int>(parse_int(k, v));
       }},
      {"finetune_enabled", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.finetune_enabled = parse_bool(k, v);
       }},
      {"finetune_augment", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.finetune_augment = parse_bool(k, v);
       }},
      {"save_pseudo_masks", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.save_pseudo_masks = parse_bool(k, v);
       }},
      {"threads", [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.threads = static_cast<int>(parse_int(k, v));
       }},
  };
  const auto it = kSetters.find(key);
  if (it == kSetters.end()) {
    throw config_error("unknown config key '" + key + "'");
  }
  it->second(c, key, value);
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line != kConfigVersion) {
    throw config_error("config must start with '" + std::string(kConfigVersion) + "'");
  }
  PipelineConfig config;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

double tag_purity(const DatasetManifest& manifest, Split split,
                  const std::vector<std::size_t>* subset) {
  const std::vector<ManifestRecord> records = manifest.split_records(split);
  std::vector<std::size_t> all;
  if (subset == nullptr) {
    all.resize(records.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      all[i] = i;
    }
    subset = &all;
  }
  if (subset->empty()) {
    return 0.0;
  }
  std::size_t correct = 0;
  for (const std::size_t i : *subset) {
    const ManifestRecord& rec = records.at(i);
    if (rec.truth_path.empty()) {
      throw std::invalid_argument("tag_purity: record '" + rec.image_path + "' has no truth mask");
    }
    const LabelImage truth = io::load_mask(manifest.resolve(rec.truth_path));
    if (majority_class(truth) == rec.tag) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(subset->size());
}

namespace {

void write_report(const std::filesystem::path& path, const CurationReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write report " + path.string());
  }
  out << kReportVersion << "\n";
  out << "stage\t" << report.stage << "\tinput\t" << report.input_count << "\tkept\t"
      << report.kept_count << "\tdropped\t" << report.dropped_count << "\n";
  for (const FilterDecision& d : report.decisions) {
    out << d.image_path << '\t' << d.tag << '\t' << format_double(d.p_tag) << '\t' << d.tag_rank
        << '\t' << (d.kept ? "kept" : "dropped") << "\n";
  }
}

void write_finetune_report(const std::filesystem::path& path, const FinetuneSet& set) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write report " + path.string());
  }
  out << kReportVersion << "\n";
  out << "stage\tfinetune-gate\tinput\t" << set.decisions.size() << "\tkept\t"
      << set.samples.size() << "\tdropped\t" << set.decisions.size() - set.samples.size() << "\n";
  for (const FinetuneDecision& d : set.decisions) {
    out << d.image_path << '\t' << d.tag << '\t' << format_double(d.p_masked) << '\t'
        << (d.accepted ? "accepted" : "rejected") << "\n";
  }
}

class PseudoSetData : public SegmenterData {
 public:
  PseudoSetData(const SplitData& data, const std::vector<std::size_t>& indices,
                const std::vector<LabelImage>& masks)
      : data_(data), indices_(indices), masks_(masks) {}
  std::size_t size() const override { return indices_.size(); }
  SegmenterSample sample(std::size_t i) const override {
    return SegmenterSample{data_.image(indices_[i]), masks_[i]};
  }

 private:
  const SplitData& data_;
  const std::vector<std::size_t>& indices_;
  const std::vector<LabelImage>& masks_;
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
  if (!(config.delta1 > config.delta2)) {
    throw config_error("pipeline requires delta1 > delta2");
  }
  const std::filesystem::path out_dir(config.out_dir);
  std::filesystem::create_directories(out_dir);
  std::filesystem::create_directories(out_dir / "reports");
  std::filesystem::create_directories(out_dir / "checkpoints");

  // --- data ---
  DatasetManifest manifest = run_stage("data", [&] {
    if (!config.data_dir.empty()) {
      return load_manifest(std::filesystem::path(config.data_dir) / "manifest.tsv");
    }
    SynthSpec spec = config.synth;
    spec.seed = derive_seed(config.seed, "synth");
    return synth_generate(spec, out_dir / "data");
  });
  const int class_count = run_stage("data", [&] {
    int k = 0;
    for (const auto& rec : manifest.records) {
      k = std::max(k, rec.tag);
    }
    if (k < 1) {
      throw config_error("manifest has no records");
    }
    return k;
  });

  SplitData train = run_stage("data", [&] {
    return load_split(manifest, Split::kAttentionTrain, config.threads);
  });

  PipelineResult result;

  // --- filter cascade ---
  const CascadeResult cascade = run_stage("filter-cascade", [&] {
    TrainSchedule schedule = config.classifier_schedule;
    schedule.seed = derive_seed(config.seed, "cascade-batches");
    schedule.threads = config.threads;
    return filter_cascade(train, class_count, schedule, derive_seed(config.seed, "cascade"));
  });
  result.cascade_reports = cascade.reports;

  // --- attention classifier on the fully filtered data ---
  result.classifier = run_stage("attention-classifier", [&] {
    TrainSchedule schedule = config.classifier_schedule;
    schedule.seed = derive_seed(config.seed, "attention-classifier-batches");
    schedule.threads = config.threads;
    class KeptData : public ClassifierData {
     public:
      KeptData(const SplitData& d, const std::vector<std::size_t>& idx) : d_(d), idx_(idx) {}
      std::size_t size() const override { return idx_.size(); }
      ClassifierSample sample(std::size_t i) const override {
        return ClassifierSample{d_.image(idx_[i]), d_.records[idx_[i]].tag};
      }

     private:
      const SplitData& d_;
      const std::vector<std::size_t>& idx_;
    } kept_view(train, cascade.kept);
    return train_classifier(
        make_classifier(3, class_count, derive_seed(config.seed, "attention-classifier-init")),
        kept_view, schedule);
  });

  // --- attention pseudo ground truth over the kept training images ---
  std::vector<LabelImage> pseudo_masks(cascade.kept.size());
  run_stage("pseudo-gt", [&] {
    PseudoGtParams params;
    params.variant = AttentionVariant::kFusedSmoothed;
    params.lambda1 = config.lambda1;
    params.lambda2 = config.lambda2;
    params.delta1 = config.delta1;
    params.delta2 = config.delta2;
    params.segments = config.segments;
    const std::uint64_t seg_seed = derive_seed(config.seed, "pseudo-segments");
    parallel_for(cascade.kept.size(), config.threads, [&](std::size_t i) {
      const std::size_t idx = cascade.kept[i];
      const PseudoMask mask =
          attention_pseudo_mask(result.classifier, train.image(idx), train.records[idx].tag,
                                params, derive_seed(seg_seed, "image", idx));
      pseudo_masks[i] = mask.labels;
    });
    if (config.save_pseudo_masks) {
      std::filesystem::create_directories(out_dir / "pseudo_gt");
      for (std::size_t i = 0; i < cascade.kept.size(); ++i) {
        const std::filesystem::path name =
            std::filesystem::path(train.records[cascade.kept[i]].image_path).stem();
        io::save_mask(pseudo_masks[i], out_dir / "pseudo_gt" / (name.string() + ".pgm"));
      }
    }
    return 0;
  });
  result.pseudo_count = pseudo_masks.size();

  // --- initial segmenter ---
  result.initial_segmenter = run_stage("train-segmenter", [&] {
    TrainSchedule schedule = config.segmenter_schedule;
    schedule.seed = derive_seed(config.seed, "segmenter-batches");
    schedule.threads = config.threads;
    const PseudoSetData data(train, cascade.kept, pseudo_masks);
    return train_segmenter(
        make_segmenter(3, class_count, derive_seed(config.seed, "segmenter-init")), data,
        schedule);
  });

  // --- online fine-tuning ---
  FinetuneSet finetune_set;
  if (config.finetune_enabled) {
    SplitData pool = run_stage("finetune-pool", [&] {
      return load_split(manifest, Split::kFinetunePool, config.threads);
    });
    finetune_set = run_stage("finetune-set", [&] {
      FinetuneParams params;
      params.mu = config.mu;
      params.delta1 = config.delta1;
      params.delta2 = config.delta2;
      params.segments = config.segments;
      params.seed = derive_seed(config.seed, "finetune");
      params.threads = config.threads;
      return build_finetune_set(pool, result.initial_segmenter, result.classifier, params);
    });
    result.finetune_set_size = finetune_set.samples.size();
    write_finetune_report(out_dir / "reports" / "finetune_gate.tsv", finetune_set);

    result.finetuned_segmenter = run_stage("finetune", [&] {
      if (finetune_set.samples.empty()) {
        return result.initial_segmenter;  // nothing accepted: fine-tuning is a no-op
      }
      std::vector<SegmenterSample> samples = finetune_set.samples;
      if (config.finetune_augment) {
        for (std::size_t i = 0; i < cascade.kept.size(); ++i) {
          samples.push_back(SegmenterSample{train.image(cascade.kept[i]), pseudo_masks[i]});
        }
      }
      TrainSchedule schedule = config.finetune_schedule;
      schedule.seed = derive_seed(config.seed, "finetune-batches");
      schedule.threads = config.threads;
      const VectorSegmenterData data(std::move(samples));
      return train_segmenter(result.initial_segmenter, data, schedule);
    });
    if (config.save_pseudo_masks) {
      std::filesystem::create_directories(out_dir / "finetune_gt");
      for (std::size_t i = 0; i < finetune_set.samples.size(); ++i) {
        const std::filesystem::path name =
            std::filesystem::path(pool.records[finetune_set.source_indices[i]].image_path).stem();
        io::save_mask(finetune_set.samples[i].mask,
                      out_dir / "finetune_gt" / (name.string() + ".pgm"));
      }
    }
  }

  // --- evaluation (the only stage that reads truth masks) ---
  run_stage("eval", [&] {
    result.input_purity = tag_purity(manifest, Split::kAttentionTrain);
    result.retained_purity = tag_purity(manifest, Split::kAttentionTrain, &cascade.kept);
    for (std::size_t r = 0; r < result.cascade_reports.size(); ++r) {
      result.cascade_reports[r].retained_purity =
          tag_purity(manifest, Split::kAttentionTrain, &cascade.kept_per_stage[r]);
    }

    const std::vector<ManifestRecord> eval_records = manifest.split_records(Split::kEval);
    std::vector<LabelImage> truths(eval_records.size());
    std::vector<LabelImage> initial_preds(eval_records.size());
    std::vector<LabelImage> finetuned_preds(eval_records.size());
    const bool have_finetuned = result.finetuned_segmenter.has_value();
    parallel_for(eval_records.size(), config.threads, [&](std::size_t i) {
      const FeatureMap image = io::load_image(manifest.resolve(eval_records[i].image_path));
      truths[i] = io::load_mask(manifest.resolve(eval_records[i].truth_path));
      initial_preds[i] = segment_predict(result.initial_segmenter, image);
      if (have_finetuned) {
        finetuned_preds[i] = segment_predict(*result.finetuned_segmenter, image);
      }
    });
    result.initial_eval = mean_iou(initial_preds, truths, class_count);
    if (have_finetuned) {
      result.finetuned_eval = mean_iou(finetuned_preds, truths, class_count);
    }
    return 0;
  });

  // --- artifacts ---
  run_stage("emit", [&] {
    save_checkpoint(result.classifier, out_dir / "checkpoints" / "classifier.ckpt");
    save_checkpoint(result.initial_segmenter, out_dir / "checkpoints" / "initial_segmenter.ckpt");
    if (result.finetuned_segmenter) {
      save_checkpoint(*result.finetuned_segmenter,
                      out_dir / "checkpoints" / "finetuned_segmenter.ckpt");
    }
    for (std::size_t r = 0; r < result.cascade_reports.size(); ++r) {
      write_report(out_dir / "reports" / ("filter_stage" + std::to_string(r + 1) + ".tsv"),
                   result.cascade_reports[r]);
    }

    std::ofstream metrics(out_dir / "metrics.txt", std::ios::trunc);
    if (!metrics) {
      throw std::runtime_error("cannot write metrics file");
    }
    metrics << kMetricsVersion << "\n";
    metrics << "seed\t" << config.seed << "\n";
    metrics << "classes\t" << class_count << "\n";
    for (std::size_t r = 0; r < result.cascade_reports.size(); ++r) {
      const CurationReport& rep = result.cascade_reports[r];
      const std::string p = "cascade.stage" + std::to_string(r + 1);
      metrics << p << ".input\t" << rep.input_count << "\n";
      metrics << p << ".kept\t" << rep.kept_count << "\n";
      metrics << p << ".dropped\t" << rep.dropped_count << "\n";
      metrics << p << ".purity\t" << format_double(rep.retained_purity) << "\n";
    }
    metrics << "cascade.input_purity\t" << format_double(result.input_purity) << "\n";
    metrics << "cascade.retained_purity\t" << format_double(result.retained_purity) << "\n";
    metrics << "pseudo_gt.count\t" << result.pseudo_count << "\n";
    metrics << "finetune.enabled\t" << (config.finetune_enabled ? 1 : 0) << "\n";
    if (config.finetune_enabled) {
      metrics << "finetune.set_size\t" << result.finetune_set_size << "\n";
    }
    metrics << "eval.initial.miou\t" << format_double(result.initial_eval.mean) << "\n";
    for (int c = 0; c <= class_count; ++c) {
      if (result.initial_eval.class_present[c]) {
        metrics << "eval.initial.iou." << c << "\t"
                << format_double(result.initial_eval.per_class[c]) << "\n";
      }
    }
    if (result.finetuned_segmenter) {
      metrics << "eval.finetuned.miou\t" << format_double(result.finetuned_eval.mean) << "\n";
      for (int c = 0; c <= class_count; ++c) {
        if (result.finetuned_eval.class_present[c]) {
          metrics << "eval.finetuned.iou." << c << "\t"
                  << format_double(result.finetuned_eval.per_class[c]) << "\n";
        }
      }
    } else {
      metrics << "eval.finetuned.miou\tabsent\n";
    }
    result.metrics_path = out_dir / "metrics.txt";
    return 0;
  });

  return result;
}

}  // namespace tagseg
