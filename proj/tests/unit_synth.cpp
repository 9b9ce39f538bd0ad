#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <irk/synth.hpp>
#include <map>
#include <set>

using namespace irk;

namespace {

const PhraseBank& bank() {
  static PhraseBank b = PhraseBank::load_default();
  return b;
}

}  // namespace

TEST_CASE("generation is deterministic: same seed, byte-identical manifests and images") {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.train_identities = 4;
  cfg.test_identities = 2;
  auto m1 = generate_manifest(cfg, bank());
  auto m2 = generate_manifest(cfg, bank());
  CHECK(m1 == m2);
  CHECK(manifest_to_jsonl(m1) == manifest_to_jsonl(m2));
  for (size_t i = 0; i < m1.records.size(); ++i) {
    auto i1 = render_sample(m1.spec_of(m1.records[i]), m1.records[i], m1.config);
    auto i2 = render_sample(m2.spec_of(m2.records[i]), m2.records[i], m2.config);
    REQUIRE(i1.values.size() == i2.values.size());
    CHECK(std::memcmp(i1.values.data(), i2.values.data(), i1.values.size() * sizeof(float)) == 0);
  }
  auto m3 = generate_manifest(SynthConfig{.train_identities = 4, .test_identities = 2, .seed = 8},
                              bank());
  CHECK_FALSE(m1 == m3);
}

TEST_CASE("default config: 20 identities x 8 samples give 160 train records") {
  SynthConfig cfg;
  auto m = generate_manifest(cfg, bank());
  CHECK(m.split("train").size() == 160);
  CHECK(m.split("query").size() == size_t(cfg.test_identities * cfg.query_per_test_identity));
  CHECK(m.split("gallery").size() == size_t(cfg.test_identities * cfg.gallery_per_test_identity));
  // splits are disjoint and every query identity appears in gallery
  std::set<int> gallery_ids;
  for (const auto* r : m.split("gallery")) gallery_ids.insert(r->identity);
  for (const auto* r : m.split("query")) CHECK(gallery_ids.count(r->identity) == 1);
  std::set<int> train_ids;
  for (const auto* r : m.split("train")) train_ids.insert(r->identity);
  for (int id : gallery_ids) CHECK(train_ids.count(id) == 0);
  // both modalities present in query and gallery
  for (const char* split : {"query", "gallery"}) {
    std::set<std::string> mods;
    for (const auto* r : m.split(split)) mods.insert(r->modality);
    CHECK(mods.size() == 2);
  }
  // attributes stay consistent with the worn clothes
  for (const auto& r : m.records) {
    const ClothesSpec* worn = nullptr;
    for (const auto& c : m.spec_of(r).wardrobe)
      if (c.clothes_id == r.clothes) worn = &c;
    REQUIRE(worn != nullptr);
    CHECK(std::find(r.attributes.begin(), r.attributes.end(), worn->coat_color) != r.attributes.end());
    CHECK(std::find(r.attributes.begin(), r.attributes.end(), worn->trousers_color) !=
          r.attributes.end());
  }
}

TEST_CASE("invalid configs are rejected") {
  SynthConfig bad;
  bad.wardrobe = 1;
  CHECK_THROWS_AS(generate_manifest(bad, bank()), ConfigError);
  SynthConfig bad2;
  bad2.samples_per_train_identity = 1;
  CHECK_THROWS_AS(generate_manifest(bad2, bank()), ConfigError);
}

TEST_CASE("clothes change moves only clothes rows, under 60% of pixels") {
  SynthConfig cfg;
  cfg.train_identities = 2;
  cfg.test_identities = 2;
  auto m = generate_manifest(cfg, bank());
  const auto& spec = m.identities[0];
  SampleRecord a, b;
  a.identity = b.identity = spec.identity;
  a.spec_index = b.spec_index = 0;
  a.camera = b.camera = 0;
  a.render_seed = b.render_seed = 999;  // identical sensor noise isolates the clothes diff
  a.clothes = spec.wardrobe[0].clothes_id;
  b.clothes = spec.wardrobe[1].clothes_id;
  auto ia = render_sample(spec, a, cfg);
  auto ib = render_sample(spec, b, cfg);
  auto layout = body_layout(cfg.image_height);
  int changed = 0, total = 0;
  for (int c = 0; c < cfg.channels; ++c)
    for (int y = 0; y < cfg.image_height; ++y)
      for (int x = 0; x < cfg.image_width; ++x) {
        size_t i = size_t(c) * cfg.image_height * cfg.image_width + size_t(y) * cfg.image_width +
                   size_t(x);
        total += 1;
        if (ia.values[i] != ib.values[i]) {
          changed += 1;
          CHECK(y >= layout.bio_end);  // biometric band is clothes-invariant
        }
      }
  CHECK(changed > 0);
  CHECK(double(changed) / total < 0.60);
}

TEST_CASE("identity is learnable: nearest-centroid on biometric regions is at least 95% accurate") {
  SynthConfig cfg;  // default: 20 train + 10 test identities
  auto m = generate_manifest(cfg, bank());
  auto layout = body_layout(cfg.image_height);
  const size_t bio_len = size_t(cfg.channels) * 0 +  // computed below per channel rows
                         size_t(cfg.channels) * size_t(layout.bio_end) * size_t(cfg.image_width);

  auto bio_region = [&](const Tensor<float>& img) {
    std::vector<double> v;
    v.reserve(bio_len);
    for (int c = 0; c < cfg.channels; ++c)
      for (int y = 0; y < layout.bio_end; ++y)
        for (int x = 0; x < cfg.image_width; ++x)
          v.push_back(img.values[size_t(c) * cfg.image_height * cfg.image_width +
                                 size_t(y) * cfg.image_width + size_t(x)]);
    return v;
  };

  // centroids over a fresh render set (three seeds per record), probes from
  // further fresh seeds
  std::map<int, std::vector<double>> centroid;
  std::map<int, int> count;
  // visible renders only: the infrared transform collapses color on purpose
  Rng centroid_seed(777);
  for (const auto& r : m.records) {
    if (r.modality != "visible") continue;
    for (int rep = 0; rep < 3; ++rep) {
      SampleRecord fresh = r;
      fresh.render_seed = centroid_seed.next_u64();
      auto v = bio_region(render_sample(m.spec_of(fresh), fresh, cfg));
      auto& c = centroid[r.identity];
      if (c.empty()) c.assign(v.size(), 0.0);
      for (size_t i = 0; i < v.size(); ++i) c[i] += v[i];
      count[r.identity] += 1;
    }
  }
  for (auto& [id, c] : centroid)
    for (auto& v : c) v /= count[id];

  int correct = 0, total = 0;
  Rng probe_seed(4242);
  for (const auto& r : m.records) {
    if (r.modality != "visible") continue;
    SampleRecord fresh = r;
    fresh.render_seed = probe_seed.next_u64();  // new noise, occluders, white balance
    auto v = bio_region(render_sample(m.spec_of(fresh), fresh, cfg));
    double best = 1e300;
    int best_id = -1;
    for (const auto& [id, c] : centroid) {
      double d = 0;
      for (size_t i = 0; i < v.size(); ++i) d += (v[i] - c[i]) * (v[i] - c[i]);
      if (d < best) {
        best = d;
        best_id = id;
      }
    }
    correct += best_id == r.identity ? 1 : 0;
    total += 1;
  }
  CHECK(double(correct) / total >= 0.95);
}

TEST_CASE("manifest round-trips through jsonl") {
  SynthConfig cfg;
  cfg.train_identities = 3;
  cfg.test_identities = 2;
  cfg.seed = 11;
  auto m = generate_manifest(cfg, bank());
  auto text = manifest_to_jsonl(m);
  auto back = manifest_from_jsonl(text);
  CHECK(back == m);
  CHECK(manifest_to_jsonl(back) == text);
}

TEST_CASE("dataset write/load round trip with image files") {
  SynthConfig cfg;
  cfg.train_identities = 2;
  cfg.test_identities = 2;
  cfg.samples_per_train_identity = 2;
  cfg.seed = 13;
  auto m = generate_manifest(cfg, bank());
  auto dir = std::string("/tmp/irk_synth_test");
  std::filesystem::remove_all(dir);
  auto path = write_dataset(m, dir);
  auto loaded = load_manifest(path);
  CHECK(loaded.records.size() == m.records.size());
  for (size_t i = 0; i < loaded.records.size(); ++i) {
    CHECK_FALSE(loaded.records[i].image_path.empty());
    auto from_file = load_record_image(loaded, loaded.records[i], dir);
    auto rerendered = render_sample(m.spec_of(m.records[i]), m.records[i], cfg);
    CHECK(std::memcmp(from_file.values.data(), rerendered.values.data(),
                      rerendered.values.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("image file round trip is bit-exact") {
  Rng rng(55);
  Tensor<float> img({3, 8, 5});
  for (auto& v : img.values) v = float(rng.uniform(-2, 2));
  write_image_file("/tmp/irk_img_test.bin", img);
  auto back = read_image_file("/tmp/irk_img_test.bin");
  CHECK(back.shape() == img.shape());
  CHECK(std::memcmp(back.values.data(), img.values.data(), img.values.size() * sizeof(float)) == 0);
}

TEST_CASE("pk sampler: batch structure and exact identity counts") {
  SUBCASE("default P=32 K=4 gives 128-record batches") {
    SynthConfig cfg;
    cfg.train_identities = 32;
    cfg.samples_per_train_identity = 4;
    cfg.test_identities = 2;
    auto m = generate_manifest(cfg, bank());
    PKBatchSampler sampler(m, 32, 4, Rng(1));
    auto batch = sampler.next_batch();
    CHECK(batch.size() == 128);
  }

  SUBCASE("P=2 K=2 on a 2-identity manifest exactly covers the 4 records") {
    SynthConfig cfg;
    cfg.train_identities = 2;
    cfg.samples_per_train_identity = 2;
    cfg.test_identities = 2;
    auto m = generate_manifest(cfg, bank());
    PKBatchSampler sampler(m, 2, 2, Rng(2));
    auto batch = sampler.next_batch();
    std::set<int> uniq(batch.begin(), batch.end());
    CHECK(batch.size() == 4);
    CHECK(uniq.size() == 4);
  }

  SUBCASE("histogram oracle: every drawn identity appears exactly K times, 100 batches") {
    SynthConfig cfg;
    cfg.train_identities = 8;
    cfg.samples_per_train_identity = 8;
    cfg.test_identities = 2;
    auto m = generate_manifest(cfg, bank());
    PKBatchSampler sampler(m, 4, 4, Rng(3));
    for (int bi = 0; bi < 100; ++bi) {
      auto batch = sampler.next_batch();
      std::map<int, int> hist;
      for (int idx : batch) hist[m.records[size_t(idx)].identity] += 1;
      CHECK(hist.size() == 4);
      for (const auto& [id, n] : hist) CHECK(n == 4);
    }
  }

  SUBCASE("insufficient identities rejected") {
    SynthConfig cfg;
    cfg.train_identities = 3;
    cfg.test_identities = 2;
    auto m = generate_manifest(cfg, bank());
    CHECK_THROWS_AS(PKBatchSampler(m, 4, 4, Rng(4)), ContractError);
  }
}

TEST_CASE("augmentation") {
  SynthConfig cfg;
  cfg.train_identities = 2;
  cfg.test_identities = 2;
  auto m = generate_manifest(cfg, bank());
  auto img = render_sample(m.spec_of(m.records[0]), m.records[0], cfg);

  SUBCASE("empty policy is the identity transform") {
    AugmentPolicy none{false, false, false};
    Rng rng(1);
    auto out = augment(img, rng, none);
    CHECK(out.values == img.values);
  }

  SUBCASE("flip twice with forced probability restores the original") {
    AugmentPolicy flip_only{false, true, false};
    flip_only.p_flip = 1.0;
    Rng rng(2);
    auto once = augment(img, rng, flip_only);
    CHECK_FALSE(once.values == img.values);
    auto twice = augment(once, rng, flip_only);
    CHECK(twice.values == img.values);
  }

  SUBCASE("forced erase blanks exactly one in-bounds rectangle of mean pixels") {
    AugmentPolicy erase_only{false, false, true};
    erase_only.p_erase = 1.0;
    double mean = 0;
    for (float v : img.values) mean += v;
    mean /= double(img.values.size());
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      auto out = augment(img, rng, erase_only);
      int h = cfg.image_height, w = cfg.image_width;
      int y0 = h, y1 = -1, x0 = w, x1 = -1;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool diff = false;
          for (int c = 0; c < cfg.channels; ++c) {
            size_t i = size_t(c) * h * w + size_t(y) * w + size_t(x);
            if (out.values[i] != img.values[i]) diff = true;
          }
          if (diff) {
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
          }
        }
      REQUIRE(y1 >= y0);
      // every pixel inside the bounding box is the mean value
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          for (int c = 0; c < cfg.channels; ++c)
            CHECK(out.values[size_t(c) * h * w + size_t(y) * w + size_t(x)] ==
                  doctest::Approx(mean).epsilon(1e-6));
      double frac = double((y1 - y0 + 1) * (x1 - x0 + 1)) / double(h * w);
      CHECK(frac >= 0.005);
      CHECK(frac <= 0.30);
    }
  }

  SUBCASE("crop keeps shape") {
    AugmentPolicy crop_only{true, false, false};
    Rng rng(3);
    auto out = augment(img, rng, crop_only);
    CHECK(out.shape() == img.shape());
  }
}

TEST_CASE("templates: deterministic per clothes id, distinct across wardrobe") {
  SynthConfig cfg;
  cfg.train_identities = 2;
  cfg.test_identities = 2;
  auto m = generate_manifest(cfg, bank());
  const auto& w = m.identities[0].wardrobe;
  auto t0 = render_template(w[0], cfg);
  auto t0b = render_template(w[0], cfg);
  CHECK(t0.values == t0b.values);
  auto t1 = render_template(w[1], cfg);
  CHECK_FALSE(t0.values == t1.values);
  CHECK(t0.shape() == Shape{cfg.channels, cfg.instr_image_height, cfg.instr_image_width});
}

TEST_CASE("infrared renders collapse color") {
  SynthConfig cfg;
  cfg.train_identities = 2;
  cfg.test_identities = 2;
  auto m = generate_manifest(cfg, bank());
  SampleRecord r = m.records[0];
  r.modality = "infrared";
  auto ir = render_sample(m.spec_of(r), r, cfg);
  // channel spread is bounded by the infrared noise amplitude
  int h = cfg.image_height, w = cfg.image_width;
  for (int y = 0; y < h; y += 7)
    for (int x = 0; x < w; x += 5) {
      float mn = 2, mx = -2;
      for (int c = 0; c < 3; ++c) {
        float v = ir.values[size_t(c) * h * w + size_t(y) * w + size_t(x)];
        mn = std::min(mn, v);
        mx = std::max(mx, v);
      }
      CHECK(mx - mn <= 0.11f);
    }
}
