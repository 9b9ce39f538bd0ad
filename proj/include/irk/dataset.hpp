#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irk/common.hpp"

namespace irk {

// One wardrobe item; clothes ids are globally unique.
struct ClothesSpec {
  int clothes_id = 0;
  std::string coat_color;
  std::string coat_style;
  std::string trousers_color;
  std::string trousers_length;
};

// Generation-time identity description. The biometric vector is the
// persistent appearance seed: constant across every render of the identity.
struct SyntheticIdentitySpec {
  int identity = 0;
  std::vector<double> biometric;
  std::vector<ClothesSpec> wardrobe;
  std::vector<int> cameras;
  std::vector<std::string> persistent_attributes;  // hair, gender, age words
};

// One dataset item as the loaders see it.
struct SampleRecord {
  int identity = 0;
  int camera = 0;
  int clothes = 0;
  std::string modality = "visible";  // visible | infrared
  std::string split = "train";       // train | query | gallery
  std::vector<std::string> tasks;
  std::vector<std::string> attributes;
  std::vector<std::string> description;
  std::string image_path;  // empty when images are regenerated from seeds
  uint64_t render_seed = 0;
  int spec_index = -1;  // row in the manifest identity table
  int sample_index = 0;
};

struct SynthConfig {
  int train_identities = 20;
  int samples_per_train_identity = 8;
  int test_identities = 10;
  int query_per_test_identity = 2;
  int gallery_per_test_identity = 4;
  int cameras = 2;
  int wardrobe = 3;
  int image_height = 64;
  int image_width = 32;
  int channels = 3;
  int instr_image_height = 16;
  int instr_image_width = 16;
  uint64_t seed = 7;
  bool write_images = true;

  void validate() const {
    if (train_identities + test_identities < 2) throw ConfigError("need at least 2 identities");
    if (samples_per_train_identity < 2) throw ConfigError("need at least 2 samples per identity");
    if (wardrobe < 2) throw ConfigError("wardrobe size must be at least 2 for clothes-changing splits");
    if (cameras < 1) throw ConfigError("need at least one camera");
  }
};

struct Manifest {
  SynthConfig config;
  std::vector<SyntheticIdentitySpec> identities;
  std::vector<SampleRecord> records;

  const SyntheticIdentitySpec& spec_of(const SampleRecord& r) const {
    if (r.spec_index < 0 || r.spec_index >= int(identities.size()))
      throw ContractError("record has no identity spec");
    return identities[size_t(r.spec_index)];
  }

  std::vector<const SampleRecord*> split(const std::string& name) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }
};

}  // namespace irk
