#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "reference_values.hpp"
#include "tagseg/curation.hpp"
#include "tagseg/errors.hpp"
#include "tagseg/pipeline.hpp"
#include "tagseg/synth.hpp"
#include "test_helpers.hpp"

using namespace tagseg;
using tagseg::testing::random_image;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "tagseg-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Identity-style probe classifier: K one-hot input channels on 1x1 images,
// scaled so the softmax saturates where needed.
Network probe_classifier(int k, double scale) {
  Network net;
  net.head = HeadKind::kClassifier;
  net.class_count = k;
  net.input_channels = k;
  LayerSpec fc;
  fc.kind = LayerKind::kFullyConnected;
  fc.in_channels = k;
  fc.out_channels = k;
  fc.weights.assign(static_cast<std::size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) {
    fc.weights[static_cast<std::size_t>(i) * k + i] = scale;
  }
  net.layers.push_back(fc);
  net.layers.push_back(tagseg::testing::plain_spec(LayerKind::kSoftmax));
  return net;
}

SplitData one_hot_split(int k, const std::vector<int>& tags) {
  SplitData data;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    io::StoredImage img;
    img.channels = k;
    img.height = 1;
    img.width = 1;
    img.pixels.assign(k, 0);
    img.pixels[tags[i] - 1] = 255;
    data.images.push_back(img);
    data.records.push_back(TrainRecord{"img" + std::to_string(i), tags[i]});
  }
  return data;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = i;
  }
  return idx;
}

TrainSchedule quick_schedule(int iterations, std::uint64_t seed) {
  TrainSchedule s;
  s.iterations = iterations;
  s.seed = seed;
  s.threads = 1;
  return s;
}

}  // namespace

TEST_SUITE("curation") {

TEST_CASE("the three rules apply their thresholds exactly") {
  std::vector<double> probs = {0.05, 0.35, 0.6};
  CHECK_FALSE(filter_rule_keeps(1, probs, 1));  // 0.05 <= 0.1
  CHECK(filter_rule_keeps(1, probs, 2));
  probs[0] = 0.1;
  CHECK_FALSE(filter_rule_keeps(1, probs, 1));  // inclusive boundary

  CHECK_FALSE(filter_rule_keeps(3, {0.6, 0.4}, 1));  // 0.6 <= 0.6 drops
  CHECK(filter_rule_keeps(3, {0.7, 0.3}, 1));

  std::vector<double> twenty(20, 0.01);
  twenty[4] = 0.4;
  twenty[9] = 0.3;
  twenty[14] = 0.2;
  twenty[2] = 0.12;  // rank 3 (0-based)
  CHECK(filter_rule_keeps(2, twenty, 15));        // class 15 sits at rank 2
  CHECK_FALSE(filter_rule_keeps(2, twenty, 3));   // class 3 sits at rank 3
  CHECK(filter_rule_keeps(2, twenty, 5));
  CHECK_THROWS_AS(filter_rule_keeps(2, {0.5, 0.5}, 1), config_error);
  CHECK_THROWS_AS(filter_rule_keeps(4, {0.5, 0.5}, 1), std::invalid_argument);
}

TEST_CASE("filter_stage reports decisions and keeps subsets") {
  const int k = 5;
  const SplitData data = one_hot_split(k, {1, 2, 3, 4, 5, 1, 2});
  const Network strong = probe_classifier(k, 10.0);
  const auto [kept, report] = filter_stage(data, iota_indices(data.size()), strong, 3, 1);
  CHECK(report.input_count == 7);
  CHECK(report.kept_count == 7);  // every tag matches its one-hot image
  CHECK(report.dropped_count == 0);
  CHECK(kept.size() == 7);
  for (const auto& d : report.decisions) {
    CHECK(d.kept);
    CHECK(d.tag_rank == 0);
    CHECK(d.p_tag > 0.9);
  }

  // Mislabel two records: their tag channel is cold, so rule 3 drops them.
  SplitData noisy = data;
  noisy.records[1].tag = 3;
  noisy.records[4].tag = 1;
  const auto [kept2, report2] = filter_stage(noisy, iota_indices(noisy.size()), strong, 3, 1);
  CHECK(report2.kept_count == 5);
  CHECK(report2.dropped_count == 2);
  for (const std::size_t idx : kept2) {
    CHECK(idx != 1);
    CHECK(idx != 4);
  }
}

TEST_CASE("a stage that drops nothing reports dropped = 0") {
  const SplitData data = one_hot_split(4, {1, 2, 3, 4});
  const auto [kept, report] = filter_stage(data, iota_indices(4), probe_classifier(4, 10.0), 3, 1);
  CHECK(kept.size() == 4);
  CHECK(report.dropped_count == 0);
}

TEST_CASE("rule 3 subsumes rule 1 for any classifier") {
  const int k = 4;
  Rng rng(900);
  std::vector<int> tags;
  SplitData data;
  for (int i = 0; i < 40; ++i) {
    io::StoredImage img;
    img.channels = k;
    img.height = 1;
    img.width = 1;
    img.pixels.resize(k);
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(rng.next_below(256));
    }
    data.images.push_back(img);
    data.records.push_back(TrainRecord{"r" + std::to_string(i),
                                       1 + static_cast<int>(rng.next_below(k))});
  }
  const Network probe = probe_classifier(k, 6.0);
  const auto [kept1, rep1] = filter_stage(data, iota_indices(data.size()), probe, 1, 1);
  const auto [kept3, rep3] = filter_stage(data, iota_indices(data.size()), probe, 3, 1);
  for (const std::size_t idx : kept3) {
    CHECK(std::find(kept1.begin(), kept1.end(), idx) != kept1.end());
  }
}

TEST_CASE("the cascade cleans a noise-free benchmark almost losslessly") {
  SynthSpec spec;
  spec.class_count = 5;
  spec.image_size = 32;
  spec.train_count = 240;
  spec.pool_count = 0;
  spec.eval_count = 0;
  spec.noise_rate = 0.0;
  spec.distractor_rate = 0.1;
  spec.seed = 901;
  const fs::path dir = temp_dir("cascade_clean");
  const DatasetManifest manifest = synth_generate(spec, dir);
  const SplitData data = load_split(manifest, Split::kAttentionTrain, 1);
  const CascadeResult result = filter_cascade(data, 5, quick_schedule(400, 902), 903);
  CHECK(result.reports.size() == 3);
  CHECK(result.reports[0].input_count == 240);
  const double retention =
      static_cast<double>(result.kept.size()) / static_cast<double>(data.size());
  CHECK(retention >= 0.95);
  CHECK(retention == doctest::Approx(refvals::kCleanCascadeRetention).epsilon(1e-9));
  // Monotone: each stage's kept set is a subset of its input.
  CHECK(result.reports[0].kept_count <= result.reports[0].input_count);
  CHECK(result.reports[1].input_count == result.reports[0].kept_count);
  CHECK(result.reports[2].input_count == result.reports[1].kept_count);
}

TEST_CASE("uniformly random tags are curated above chance purity") {
  double purity_sum = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    SynthSpec spec;
    spec.class_count = 5;
    spec.image_size = 32;
    spec.train_count = 200;
    spec.pool_count = 0;
    spec.eval_count = 0;
    spec.noise_rate = 0.8;  // tag uniform over all five classes
    spec.seed = 910 + seed;
    const fs::path dir = temp_dir(("cascade_random" + std::to_string(seed)).c_str());
    const DatasetManifest manifest = synth_generate(spec, dir);
    const SplitData data = load_split(manifest, Split::kAttentionTrain, 1);
    const CascadeResult result = filter_cascade(data, 5, quick_schedule(300, 911), 912 + seed);
    purity_sum += tag_purity(manifest, Split::kAttentionTrain, &result.kept);
  }
  CHECK(purity_sum / 5.0 > 0.2);
}

TEST_CASE("emptying the manifest aborts with a data-exhaustion error") {
  SynthSpec spec;
  spec.class_count = 5;
  spec.image_size = 16;
  spec.train_count = 12;
  spec.pool_count = 0;
  spec.eval_count = 0;
  spec.seed = 920;
  const fs::path dir = temp_dir("cascade_exhaust");
  const DatasetManifest manifest = synth_generate(spec, dir);
  const SplitData data = load_split(manifest, Split::kAttentionTrain, 1);
  TrainSchedule frozen = quick_schedule(1, 921);
  frozen.learning_rate = 0.0;  // classifier stays uniform: rule 3 drops all
  CHECK_THROWS_AS(filter_cascade(data, 5, frozen, 922), data_exhaustion_error);
}

TEST_CASE("compute_mask follows the tie-inclusive argmax rule") {
  FeatureMap probs(3, 1, 3);  // background + 2 classes, 3 pixels
  // pixel 0: tag wins, pixel 1: exact tie, pixel 2: background wins
  probs.at(0, 0, 0) = 0.3;
  probs.at(1, 0, 0) = 0.6;
  probs.at(2, 0, 0) = 0.1;
  probs.at(0, 0, 1) = 0.5;
  probs.at(1, 0, 1) = 0.5;
  probs.at(2, 0, 1) = 0.0;
  probs.at(0, 0, 2) = 0.7;
  probs.at(1, 0, 2) = 0.2;
  probs.at(2, 0, 2) = 0.1;
  const LabelImage mask = compute_mask(probs, 1);
  CHECK(mask.labels == std::vector<int>{1, 1, 0});
  CHECK_THROWS_AS(compute_mask(probs, 0), std::invalid_argument);
  CHECK_THROWS_AS(compute_mask(probs, 3), std::invalid_argument);
}

TEST_CASE("compute_mask only depends on the per-pixel ordering") {
  Rng rng(930);
  FeatureMap probs(4, 5, 5);
  for (double& v : probs.values) {
    v = rng.uniform(0.01, 1.0);
  }
  const LabelImage base = compute_mask(probs, 2);
  FeatureMap warped = probs;
  for (double& v : warped.values) {
    v = std::exp(3.0 * v) + 1.0;  // strictly increasing per-pixel transform
  }
  CHECK(compute_mask(warped, 2).labels == base.labels);
}

TEST_CASE("the gate threshold is strict and masking broadcasts") {
  CHECK(gate_accepts(0.5, 0.4));
  CHECK_FALSE(gate_accepts(0.4, 0.4));

  FeatureMap image = random_image(3, 4, 4, 940);
  LabelImage mask(4, 4, 0);
  mask.at(1, 2) = 1;
  const FeatureMap masked = apply_mask(image, mask);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        CHECK(masked.at(c, y, x) == (y == 1 && x == 2 ? image.at(c, y, x) : 0.0));
      }
    }
  }
}

TEST_CASE("an all-zero mask on a zero-bias net accepts only below 1/K") {
  Network net = tagseg::testing::toy_classifier(5, 941);
  for (auto& layer : net.layers) {
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  const FeatureMap image = random_image(2, 8, 8, 942);
  const LabelImage zero_mask(8, 8, 0);
  CHECK_FALSE(finetune_gate(net, image, zero_mask, 1, 0.4));  // 1/5 < 0.4
  CHECK(finetune_gate(net, image, zero_mask, 1, 0.1));        // 1/5 > 0.1
  CHECK_THROWS_AS(finetune_gate(net, image, zero_mask, 1, 0.0), config_error);
}

TEST_CASE("a gate that rejects everything yields an empty set") {
  SynthSpec spec;
  spec.class_count = 5;
  spec.image_size = 16;
  spec.train_count = 0;
  spec.pool_count = 10;
  spec.eval_count = 0;
  spec.seed = 950;
  const fs::path dir = temp_dir("ft_empty");
  const DatasetManifest manifest = synth_generate(spec, dir);
  const SplitData pool = load_split(manifest, Split::kFinetunePool, 1);
  FinetuneParams params;
  params.mu = 0.99;
  params.threads = 1;
  const FinetuneSet set = build_finetune_set(pool, tagseg::testing::toy_segmenter(5, 951, 3),
                                             make_classifier(3, 5, 952), params);
  CHECK(set.samples.empty());
  CHECK(set.decisions.size() == 10);
  for (const auto& d : set.decisions) {
    CHECK_FALSE(d.accepted);
  }
}

TEST_CASE("accepted images with cold tag channels become all-background masks") {
  SynthSpec spec;
  spec.class_count = 5;
  spec.image_size = 16;
  spec.train_count = 0;
  spec.pool_count = 6;
  spec.eval_count = 0;
  spec.seed = 960;
  const fs::path dir = temp_dir("ft_background");
  const DatasetManifest manifest = synth_generate(spec, dir);
  const SplitData pool = load_split(manifest, Split::kFinetunePool, 1);

  Network segmenter = make_segmenter(3, 5, 961);
  LayerSpec& head = segmenter.layers[9];
  REQUIRE(head.kind == LayerKind::kConv);
  std::fill(head.weights.begin(), head.weights.end(), 0.0);
  std::fill(head.bias.begin(), head.bias.end(), 0.0);  // uniform 1/6 everywhere

  FinetuneParams params;
  params.mu = 0.05;  // accept anything the classifier does not hate
  params.threads = 1;
  const FinetuneSet set =
      build_finetune_set(pool, segmenter, make_classifier(3, 5, 962), params);
  CHECK_FALSE(set.samples.empty());
  for (const auto& sample : set.samples) {
    for (const int code : sample.mask.labels) {
      CHECK(code == 0);  // 1/6 never clears delta2 = 0.5
    }
  }
}

TEST_CASE("a 200-image pool reproduces the pinned reference set") {
  SynthSpec spec;
  spec.class_count = 5;
  spec.image_size = 32;
  spec.train_count = 240;
  spec.pool_count = 200;
  spec.eval_count = 0;
  spec.noise_rate = 0.3;
  spec.seed = 905;
  const fs::path dir = temp_dir("ft_reference");
  const DatasetManifest manifest = synth_generate(spec, dir);
  const SplitData train = load_split(manifest, Split::kAttentionTrain, 1);
  const SplitData pool = load_split(manifest, Split::kFinetunePool, 1);

  // Quick but real models: third-round cascade classifier plus a segmenter
  // trained on its attention pseudo ground truth.
  const CascadeResult cascade = filter_cascade(train, 5, quick_schedule(400, 906), 907);
  PseudoGtParams gt_params;
  gt_params.segments.target_count = 24;
  std::vector<SegmenterSample> pseudo;
  for (const std::size_t idx : cascade.kept) {
    const PseudoMask mask =
        attention_pseudo_mask(cascade.classifier, train.image(idx), train.records[idx].tag,
                              gt_params, derive_seed(908, "segments", idx));
    pseudo.push_back(SegmenterSample{train.image(idx), mask.labels});
  }
  TrainSchedule seg_schedule = quick_schedule(400, 909);
  const Network segmenter = train_segmenter(make_segmenter(3, 5, 913),
                                            VectorSegmenterData(std::move(pseudo)), seg_schedule);

  FinetuneParams params;
  params.segments.target_count = 24;
  params.seed = 914;
  params.threads = 1;
  const FinetuneSet set = build_finetune_set(pool, segmenter, cascade.classifier, params);

  // Mask purity against the held-out truths (evaluation-side check).
  const auto pool_records = manifest.split_records(Split::kFinetunePool);
  std::size_t agree = 0, labeled = 0;
  for (std::size_t s = 0; s < set.samples.size(); ++s) {
    const LabelImage truth =
        io::load_mask(manifest.resolve(pool_records[set.source_indices[s]].truth_path));
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
      const int code = set.samples[s].mask.labels[i];
      if (code == kIgnoreLabel) {
        continue;
      }
      ++labeled;
      agree += code == truth.labels[i];
    }
  }
  const double purity = labeled > 0 ? static_cast<double>(agree) / labeled : 0.0;
  CHECK(static_cast<int>(set.samples.size()) == refvals::kFinetunePool200Size);
  CHECK(purity == doctest::Approx(refvals::kFinetunePool200Purity).epsilon(1e-6));
}

}  // TEST_SUITE
