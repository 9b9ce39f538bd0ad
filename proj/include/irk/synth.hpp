#pragma once

#include "irk/instructions.hpp"
#include "irk/tensor.hpp"

namespace irk {

// Row ranges of the composed figure. The biometric band must stay under half
// the image so clothes swaps move a minority of pixels, but remain large
// enough that identity is learnable from pixels alone.
struct BodyLayout {
  int bio_end = 0;    // rows [0, bio_end): identity texture
  int coat_end = 0;   // rows [bio_end, coat_end): coat
  int height = 0;     // rows [coat_end, height): trousers / skin
};
BodyLayout body_layout(int image_height);

// Deterministic renders. Identical inputs give byte-identical float arrays.
Tensor<float> render_sample(const SyntheticIdentitySpec& spec, const SampleRecord& rec,
                            const SynthConfig& cfg);
Tensor<float> render_template(const ClothesSpec& clothes, const SynthConfig& cfg);

// Dataset generation: identity table plus train/query/gallery records with
// attributes and description sentences already attached.
Manifest generate_manifest(const SynthConfig& cfg, const PhraseBank& bank);

// Manifest + optional image files under dir/images. Returns the manifest path.
std::string write_dataset(const Manifest& m, const std::string& dir);
Manifest load_manifest(const std::string& path);

// Reads the record's image file when the manifest was written with images,
// otherwise re-renders from the stored seeds. `dir` is the dataset root.
Tensor<float> load_record_image(const Manifest& m, const SampleRecord& rec, const std::string& dir);

// Raw float image file: 16-byte header (4 x uint32 LE: channels, height,
// width, reserved 0) followed by little-endian float32 payload.
void write_image_file(const std::string& path, const Tensor<float>& image);
Tensor<float> read_image_file(const std::string& path);

// serialization used by the manifest writer (exposed for tests)
std::string manifest_to_jsonl(const Manifest& m);
Manifest manifest_from_jsonl(const std::string& text);

bool operator==(const ClothesSpec& a, const ClothesSpec& b);
bool operator==(const SyntheticIdentitySpec& a, const SyntheticIdentitySpec& b);
bool operator==(const SampleRecord& a, const SampleRecord& b);
bool operator==(const SynthConfig& a, const SynthConfig& b);
inline bool operator==(const Manifest& a, const Manifest& b) {
  return a.config == b.config && a.identities == b.identities && a.records == b.records;
}

// ---------------------------------------------------------------------------
// Batch sampling and augmentation
// ---------------------------------------------------------------------------

// P identities x K samples per batch, drawn without replacement within an
// epoch where possible.
class PKBatchSampler {
 public:
  PKBatchSampler(const Manifest& m, int p, int k, Rng rng);
  // record indices into manifest.records, size exactly P*K
  std::vector<int> next_batch();

 private:
  void start_epoch();
  int draw_from(int identity_slot);

  const Manifest* manifest_;
  int p_, k_;
  Rng rng_;
  std::vector<std::vector<int>> per_identity_;  // record indices per identity slot
  std::vector<std::vector<int>> queues_;
  std::vector<int> epoch_identities_;
  size_t epoch_pos_ = 0;
};

struct AugmentPolicy {
  bool crop = true;
  bool flip = true;
  bool erase = true;
  double p_flip = 0.5;
  double p_erase = 0.5;
  int pad = 4;
  double erase_area_min = 0.02;
  double erase_area_max = 0.20;
};

Tensor<float> augment(const Tensor<float>& image, Rng& rng, const AugmentPolicy& policy);

}  // namespace irk
