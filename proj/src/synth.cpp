#include "irk/synth.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

namespace irk {

namespace {

using nlohmann::ordered_json;

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Rgb {
  double r, g, b;
};

const std::pair<const char*, Rgb> kCoatColors[] = {
    {"black coat", {0.08, 0.08, 0.08}}, {"blue coat", {0.12, 0.25, 0.85}},
    {"gray coat", {0.50, 0.50, 0.50}},  {"green coat", {0.10, 0.70, 0.22}},
    {"purple coat", {0.55, 0.15, 0.70}}, {"red coat", {0.85, 0.10, 0.10}},
    {"white coat", {0.95, 0.95, 0.95}}, {"yellow coat", {0.90, 0.85, 0.10}},
};
const std::pair<const char*, Rgb> kTrouserColors[] = {
    {"black trousers", {0.08, 0.08, 0.08}}, {"blue trousers", {0.12, 0.25, 0.85}},
    {"gray trousers", {0.50, 0.50, 0.50}},  {"green trousers", {0.10, 0.70, 0.22}},
    {"purple trousers", {0.55, 0.15, 0.70}}, {"red trousers", {0.85, 0.10, 0.10}},
    {"white trousers", {0.95, 0.95, 0.95}}, {"yellow trousers", {0.90, 0.85, 0.10}},
};
const char* kCoatStyles[] = {"business suit", "agnostic style coat", "dress", "jacket",
                             "long coat",     "shirt",               "sweater", "t-shirt"};
const char* kTrouserLengths[] = {"shorts trousers", "skirt", "trousers"};

template <typename Table>
int index_in(const Table& table, const std::string& word, int n) {
  for (int i = 0; i < n; ++i)
    if (word == table[i].first) return i;
  throw ContractError("unknown clothes word: " + word);
}

int style_index(const std::string& word) {
  for (int i = 0; i < 8; ++i)
    if (word == kCoatStyles[i]) return i;
  throw ContractError("unknown coat style: " + word);
}

int length_index(const std::string& word) {
  for (int i = 0; i < 3; ++i)
    if (word == kTrouserLengths[i]) return i;
  throw ContractError("unknown trousers length: " + word);
}

// fixed photometric offsets per camera, independent of the dataset seed
void camera_jitter(int camera, double& contrast, double& brightness) {
  Rng rng(0xCA0 + uint64_t(camera));
  contrast = rng.uniform(0.88, 1.12);
  brightness = rng.uniform(-0.06, 0.06);
}

// Four horizontal bands whose brightness levels are a permutation of fixed
// values keyed to the identity vector, plus per-channel tweaks and an
// identity-phased stripe overlay. The mean over the region is nearly the
// same for every identity, so identity is carried by the band ORDER: it
// cannot be read off a whole-image average, but position-aware attention can
// decode it.
double bio_texture(const std::vector<double>& b, int c, int y, int x, int h, int w, int bio_rows) {
  int band = std::min(3, 4 * y / std::max(1, bio_rows));
  // standardized analog band profile per channel: the quadruple is shifted
  // and scaled to fixed mean and variance, so whole-region first and second
  // moments carry no identity, while the profile itself is a smooth linear
  // code that generalizes to unseen identities
  auto key = [&](int j) { return b[size_t((j + 3 * c) % 8)]; };
  double mu = 0;
  for (int j = 0; j < 4; ++j) mu += key(j) / 4.0;
  double var = 0;
  for (int j = 0; j < 4; ++j) var += (key(j) - mu) * (key(j) - mu) / 4.0;
  double z = (key(band) - mu) / std::sqrt(var + 1e-6);
  z = std::max(-1.6, std::min(1.6, z));
  double base = 0.53 + 0.30 * z;
  double fx = (1.0 + 2.0 * b[3]) * x / double(w);
  double fy = (1.0 + 2.0 * b[4]) * y / double(h);
  double stripe = std::sin(kTwoPi * (fx + fy) + kTwoPi * b[5]);
  return base + 0.10 * stripe;
}

Rgb skin_tone(const std::vector<double>& b) {
  return {0.65 + 0.2 * b[0], 0.50 + 0.2 * b[1], 0.40 + 0.2 * b[2]};
}

}  // namespace

BodyLayout body_layout(int image_height) {
  BodyLayout l;
  l.bio_end = (7 * image_height) / 16;
  l.coat_end = (3 * image_height) / 4;
  l.height = image_height;
  return l;
}

Tensor<float> render_sample(const SyntheticIdentitySpec& spec, const SampleRecord& rec,
                            const SynthConfig& cfg) {
  const int h = cfg.image_height, w = cfg.image_width, ch = cfg.channels;
  const auto layout = body_layout(h);
  const ClothesSpec* clothes = nullptr;
  for (const auto& c : spec.wardrobe)
    if (c.clothes_id == rec.clothes) clothes = &c;
  if (!clothes) throw ContractError("record clothes id not in identity wardrobe");

  const Rgb coat = kCoatColors[index_in(kCoatColors, clothes->coat_color, 8)].second;
  const Rgb trouser = kTrouserColors[index_in(kTrouserColors, clothes->trousers_color, 8)].second;
  const Rgb skin = skin_tone(spec.biometric);
  const int style = style_index(clothes->coat_style);
  const int length = length_index(clothes->trousers_length);

  Tensor<float> img({ch, h, w});
  auto px = [&](int c, int y, int x) -> float& { return img.values[size_t(c) * h * w + size_t(y) * w + size_t(x)]; };

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (y < layout.bio_end) {
        for (int c = 0; c < ch; ++c)
          px(c, y, x) = float(bio_texture(spec.biometric, c, y, x, h, w, layout.bio_end));
      } else if (y < layout.coat_end) {
        double stripe = 0.78 + 0.22 * (std::sin(kTwoPi * (style + 1) * (y - layout.bio_end) /
                                                double(layout.coat_end - layout.bio_end)) > 0
                                           ? 1.0
                                           : -1.0) *
                                   0.5;
        const double base[3] = {coat.r, coat.g, coat.b};
        for (int c = 0; c < ch; ++c) px(c, y, x) = float(base[c % 3] * stripe);
      } else {
        // trousers length shortens the covered rows; skin below
        int span = h - layout.coat_end;
        int covered = length == 0 ? span / 2 : (length == 1 ? (2 * span) / 3 : span);
        bool on_trousers = (y - layout.coat_end) < covered;
        const double baset[3] = {trouser.r, trouser.g, trouser.b};
        const double bases[3] = {skin.r, skin.g, skin.b};
        for (int c = 0; c < ch; ++c) px(c, y, x) = float(on_trousers ? baset[c % 3] : bases[c % 3]);
      }
    }

  // per-record occluders: two random solid rectangles over the lower body,
  // so raw pixel statistics are nuisance-dominated and identity has to be
  // learned from the head band upward
  Rng occ(rec.render_seed ^ 0x0CC1ull);
  for (int rect = 0; rect < 2; ++rect) {
    int rh = 4 + occ.uniform_int(h / 6);
    int rw = 4 + occ.uniform_int(w / 3);
    int ymin = layout.bio_end;
    int y0 = ymin + occ.uniform_int(h - rh + 1 - ymin);
    int x0 = occ.uniform_int(w - rw + 1);
    double col[3] = {occ.uniform(), occ.uniform(), occ.uniform()};
    for (int c = 0; c < ch; ++c)
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) px(c, y, x) = float(col[c % 3]);
  }

  // per-record white-balance drift: independent channel gains and offsets.
  // Raw color statistics stop identifying the record; channel-wise ORDER
  // relations survive, so the structure stays learnable.
  Rng wb(rec.render_seed ^ 0x3B5ull);
  for (int c = 0; c < ch; ++c) {
    double gain = wb.uniform(0.65, 1.35);
    double offset = wb.uniform(-0.10, 0.10);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) px(c, y, x) = float(gain * (px(c, y, x) - 0.5) + 0.5 + offset);
  }

  // camera photometric jitter
  double contrast, brightness;
  camera_jitter(rec.camera, contrast, brightness);
  for (auto& v : img.values) v = float(contrast * (double(v) - 0.5) + 0.5 + brightness);

  // per-record sensor noise
  Rng noise(rec.render_seed);
  for (auto& v : img.values) v = float(double(v) + noise.uniform(-0.02, 0.02));

  if (rec.modality == "infrared") {
    // color collapses to the channel mean; information loss is intentional
    Rng ir(rec.render_seed ^ 0x1Full);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double gray = 0;
        for (int c = 0; c < ch; ++c) gray += px(c, y, x);
        gray /= ch;
        for (int c = 0; c < ch; ++c) px(c, y, x) = float(gray + ir.uniform(-0.05, 0.05));
      }
  }

  for (auto& v : img.values) v = std::min(1.0f, std::max(0.0f, v));
  return img;
}

Tensor<float> render_template(const ClothesSpec& clothes, const SynthConfig& cfg) {
  const int h = cfg.instr_image_height, w = cfg.instr_image_width, ch = cfg.channels;
  const int ci = index_in(kCoatColors, clothes.coat_color, 8);
  const int ti = index_in(kTrouserColors, clothes.trousers_color, 8);
  const int style = style_index(clothes.coat_style);
  const int length = length_index(clothes.trousers_length);
  const Rgb coat = kCoatColors[ci].second;
  const Rgb trouser = kTrouserColors[ti].second;

  Tensor<float> img({ch, h, w});
  const int split = (2 * h) / 3;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // block sign pattern keyed by color and style indices keeps distinct
      // wardrobe items far apart even under a random frozen encoder
      int fx = 1 + (y < split ? ci : ti);
      int fy = 1 + (y < split ? style : length);
      double sign = ((x * fx / 4 + y * fy / 4) % 2 == 0) ? 1.0 : -1.0;
      const double base[3] = {y < split ? coat.r : trouser.r, y < split ? coat.g : trouser.g,
                              y < split ? coat.b : trouser.b};
      for (int c = 0; c < ch; ++c) {
        double v = base[c % 3] + 0.35 * sign;
        img.values[size_t(c) * h * w + size_t(y) * w + size_t(x)] =
            float(std::min(1.0, std::max(0.0, v)));
      }
    }
  return img;
}

Manifest generate_manifest(const SynthConfig& cfg, const PhraseBank& bank) {
  cfg.validate();
  Manifest m;
  m.config = cfg;
  Rng root(cfg.seed);
  Rng id_rng = root.fork(1);
  Rng record_rng = root.fork(2);

  const auto& coat_colors = bank.words("coat color");
  const auto& coat_styles = bank.words("coat style");
  const auto& trouser_colors = bank.words("trousers color");
  const auto& trouser_lengths = bank.words("trousers length");
  const auto& genders = bank.words("gender code");
  const auto& hair_colors = bank.words("hair color");
  const auto& hair_styles = bank.words("hair style");
  const auto& ages = bank.words("age");

  int total_ids = cfg.train_identities + cfg.test_identities;
  int next_clothes_id = 0;
  for (int i = 0; i < total_ids; ++i) {
    SyntheticIdentitySpec spec;
    spec.identity = i;
    Rng rng = id_rng.fork(uint64_t(i));
    for (int k = 0; k < 8; ++k) spec.biometric.push_back(rng.uniform());
    for (int c = 0; c < cfg.cameras; ++c) spec.cameras.push_back(c);
    spec.persistent_attributes = {
        genders[size_t(rng.uniform_int(int(genders.size())))],
        hair_colors[size_t(rng.uniform_int(int(hair_colors.size())))],
        hair_styles[size_t(rng.uniform_int(int(hair_styles.size())))],
        ages[size_t(rng.uniform_int(int(ages.size())))],
    };
    std::set<std::string> used;
    while (int(spec.wardrobe.size()) < cfg.wardrobe) {
      ClothesSpec c;
      c.coat_color = coat_colors[size_t(rng.uniform_int(int(coat_colors.size())))];
      c.coat_style = coat_styles[size_t(rng.uniform_int(int(coat_styles.size())))];
      c.trousers_color = trouser_colors[size_t(rng.uniform_int(int(trouser_colors.size())))];
      c.trousers_length = trouser_lengths[size_t(rng.uniform_int(int(trouser_lengths.size())))];
      std::string key = c.coat_color + "|" + c.coat_style + "|" + c.trousers_color + "|" + c.trousers_length;
      if (used.count(key)) continue;  // wardrobe items must be distinct
      used.insert(key);
      c.clothes_id = next_clothes_id++;
      spec.wardrobe.push_back(c);
    }
    m.identities.push_back(std::move(spec));
  }

  // infrared renders serve the cross-modality task only; the single-modality
  // protocols stay modality-pure, mirroring the source benchmarks
  const std::vector<std::string> visible_tasks = {"trad", "cc", "ctcc", "vi", "t2i", "li"};
  const std::vector<std::string> infrared_tasks = {"vi"};
  auto make_record = [&](int spec_index, int sample_index, const std::string& split,
                         const std::string& modality) {
    const auto& spec = m.identities[size_t(spec_index)];
    SampleRecord r;
    r.identity = spec.identity;
    r.spec_index = spec_index;
    r.sample_index = sample_index;
    r.camera = sample_index % cfg.cameras;
    const auto& clothes = spec.wardrobe[size_t(sample_index % cfg.wardrobe)];
    r.clothes = clothes.clothes_id;
    r.modality = modality;
    r.split = split;
    r.tasks = modality == "infrared" ? infrared_tasks : visible_tasks;
    r.attributes = {clothes.coat_color, clothes.coat_style, clothes.trousers_color,
                    clothes.trousers_length};
    r.attributes.insert(r.attributes.end(), spec.persistent_attributes.begin(),
                        spec.persistent_attributes.end());
    r.description = attribute_to_sentences(r.attributes, bank);
    r.render_seed = record_rng.fork(uint64_t(m.records.size())).next_u64();
    m.records.push_back(std::move(r));
  };

  for (int i = 0; i < cfg.train_identities; ++i)
    for (int s = 0; s < cfg.samples_per_train_identity; ++s)
      make_record(i, s, "train", s % 4 == 3 ? "infrared" : "visible");

  for (int i = 0; i < cfg.test_identities; ++i) {
    int spec_index = cfg.train_identities + i;
    int s = 0;
    for (int q = 0; q < cfg.query_per_test_identity; ++q, ++s)
      make_record(spec_index, s, "query", q % 2 == 1 ? "infrared" : "visible");
    for (int gi = 0; gi < cfg.gallery_per_test_identity; ++gi, ++s)
      make_record(spec_index, s, "gallery", gi % 4 == 3 ? "infrared" : "visible");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

ordered_json config_to_json(const SynthConfig& c) {
  return ordered_json{{"train_identities", c.train_identities},
                      {"samples_per_train_identity", c.samples_per_train_identity},
                      {"test_identities", c.test_identities},
                      {"query_per_test_identity", c.query_per_test_identity},
                      {"gallery_per_test_identity", c.gallery_per_test_identity},
                      {"cameras", c.cameras},
                      {"wardrobe", c.wardrobe},
                      {"image_height", c.image_height},
                      {"image_width", c.image_width},
                      {"channels", c.channels},
                      {"instr_image_height", c.instr_image_height},
                      {"instr_image_width", c.instr_image_width},
                      {"seed", c.seed},
                      {"write_images", c.write_images}};
}

SynthConfig config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.train_identities = j.at("train_identities").get<int>();
  c.samples_per_train_identity = j.at("samples_per_train_identity").get<int>();
  c.test_identities = j.at("test_identities").get<int>();
  c.query_per_test_identity = j.at("query_per_test_identity").get<int>();
  c.gallery_per_test_identity = j.at("gallery_per_test_identity").get<int>();
  c.cameras = j.at("cameras").get<int>();
  c.wardrobe = j.at("wardrobe").get<int>();
  c.image_height = j.at("image_height").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.instr_image_height = j.at("instr_image_height").get<int>();
  c.instr_image_width = j.at("instr_image_width").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.write_images = j.at("write_images").get<bool>();
  return c;
}

ordered_json clothes_to_json(const ClothesSpec& c) {
  return ordered_json{{"clothes_id", c.clothes_id},
                      {"coat_color", c.coat_color},
                      {"coat_style", c.coat_style},
                      {"trousers_color", c.trousers_color},
                      {"trousers_length", c.trousers_length}};
}

ClothesSpec clothes_from_json(const nlohmann::json& j) {
  ClothesSpec c;
  c.clothes_id = j.at("clothes_id").get<int>();
  c.coat_color = j.at("coat_color").get<std::string>();
  c.coat_style = j.at("coat_style").get<std::string>();
  c.trousers_color = j.at("trousers_color").get<std::string>();
  c.trousers_length = j.at("trousers_length").get<std::string>();
  return c;
}

}  // namespace

std::string manifest_to_jsonl(const Manifest& m) {
  std::ostringstream out;
  ordered_json meta;
  meta["format"] = "irk-manifest";
  meta["version"] = 1;
  meta["config"] = config_to_json(m.config);
  ordered_json ids = ordered_json::array();
  for (const auto& s : m.identities) {
    ordered_json wardrobe = ordered_json::array();
    for (const auto& c : s.wardrobe) wardrobe.push_back(clothes_to_json(c));
    ids.push_back(ordered_json{{"identity", s.identity},
                               {"biometric", s.biometric},
                               {"wardrobe", wardrobe},
                               {"cameras", s.cameras},
                               {"persistent_attributes", s.persistent_attributes}});
  }
  meta["identities"] = ids;
  out << meta.dump() << "\n";
  for (const auto& r : m.records) {
    ordered_json jr{{"identity", r.identity},
                    {"camera", r.camera},
                    {"clothes", r.clothes},
                    {"modality", r.modality},
                    {"split", r.split},
                    {"tasks", r.tasks},
                    {"attributes", r.attributes},
                    {"description", r.description},
                    {"image", r.image_path},
                    {"render_seed", r.render_seed},
                    {"spec_index", r.spec_index},
                    {"sample_index", r.sample_index}};
    out << jr.dump() << "\n";
  }
  return out.str();
}

Manifest manifest_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest is empty");
  auto meta = nlohmann::json::parse(line);
  if (meta.value("format", "") != "irk-manifest") throw IoError("not an irk manifest");
  Manifest m;
  m.config = config_from_json(meta.at("config"));
  for (const auto& js : meta.at("identities")) {
    SyntheticIdentitySpec s;
    s.identity = js.at("identity").get<int>();
    s.biometric = js.at("biometric").get<std::vector<double>>();
    for (const auto& jc : js.at("wardrobe")) s.wardrobe.push_back(clothes_from_json(jc));
    s.cameras = js.at("cameras").get<std::vector<int>>();
    s.persistent_attributes = js.at("persistent_attributes").get<std::vector<std::string>>();
    m.identities.push_back(std::move(s));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    SampleRecord r;
    r.identity = j.at("identity").get<int>();
    r.camera = j.at("camera").get<int>();
    r.clothes = j.at("clothes").get<int>();
    r.modality = j.at("modality").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.tasks = j.at("tasks").get<std::vector<std::string>>();
    r.attributes = j.at("attributes").get<std::vector<std::string>>();
    r.description = j.at("description").get<std::vector<std::string>>();
    r.image_path = j.at("image").get<std::string>();
    r.render_seed = j.at("render_seed").get<uint64_t>();
    r.spec_index = j.at("spec_index").get<int>();
    r.sample_index = j.at("sample_index").get<int>();
    m.records.push_back(std::move(r));
  }
  // every query identity must also appear in gallery
  std::set<int> gallery_ids;
  for (const auto& r : m.records)
    if (r.split == "gallery") gallery_ids.insert(r.identity);
  for (const auto& r : m.records)
    if (r.split == "query" && !gallery_ids.count(r.identity))
      throw IoError("query identity missing from gallery: " + std::to_string(r.identity));
  return m;
}

std::string write_dataset(const Manifest& m, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Manifest copy = m;
  if (m.config.write_images) {
    fs::create_directories(fs::path(dir) / "images");
    for (size_t i = 0; i < copy.records.size(); ++i) {
      auto& r = copy.records[i];
      r.image_path = "images/" + std::to_string(i) + ".bin";
      write_image_file((fs::path(dir) / r.image_path).string(),
                       render_sample(copy.spec_of(r), r, copy.config));
    }
  }
  auto path = (fs::path(dir) / "manifest.jsonl").string();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write manifest: " + path);
  f << manifest_to_jsonl(copy);
  return path;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open manifest: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return manifest_from_jsonl(ss.str());
}

Tensor<float> load_record_image(const Manifest& m, const SampleRecord& rec,
                                const std::string& dir) {
  if (!rec.image_path.empty()) {
    auto p = std::filesystem::path(dir) / rec.image_path;
    return read_image_file(p.string());
  }
  return render_sample(m.spec_of(rec), rec, m.config);
}

void write_image_file(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("image files store rank-3 tensors");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write image: " + path);
  uint32_t header[4] = {uint32_t(image.dim(0)), uint32_t(image.dim(1)), uint32_t(image.dim(2)), 0};
  f.write(reinterpret_cast<const char*>(header), 16);
  f.write(reinterpret_cast<const char*>(image.values.data()),
          std::streamsize(image.values.size() * sizeof(float)));
}

Tensor<float> read_image_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  uint32_t header[4];
  f.read(reinterpret_cast<char*>(header), 16);
  if (!f || header[3] != 0) throw IoError("bad image header: " + path);
  Tensor<float> img({int(header[0]), int(header[1]), int(header[2])});
  f.read(reinterpret_cast<char*>(img.values.data()),
         std::streamsize(img.values.size() * sizeof(float)));
  if (!f) throw IoError("truncated image payload: " + path);
  return img;
}

bool operator==(const ClothesSpec& a, const ClothesSpec& b) {
  return a.clothes_id == b.clothes_id && a.coat_color == b.coat_color &&
         a.coat_style == b.coat_style && a.trousers_color == b.trousers_color &&
         a.trousers_length == b.trousers_length;
}

bool operator==(const SyntheticIdentitySpec& a, const SyntheticIdentitySpec& b) {
  return a.identity == b.identity && a.biometric == b.biometric && a.wardrobe == b.wardrobe &&
         a.cameras == b.cameras && a.persistent_attributes == b.persistent_attributes;
}

bool operator==(const SampleRecord& a, const SampleRecord& b) {
  return a.identity == b.identity && a.camera == b.camera && a.clothes == b.clothes &&
         a.modality == b.modality && a.split == b.split && a.tasks == b.tasks &&
         a.attributes == b.attributes && a.description == b.description &&
         a.image_path == b.image_path && a.render_seed == b.render_seed &&
         a.spec_index == b.spec_index && a.sample_index == b.sample_index;
}

bool operator==(const SynthConfig& a, const SynthConfig& b) {
  return config_to_json(a) == config_to_json(b);
}

// ---------------------------------------------------------------------------
// P x K sampler
// ---------------------------------------------------------------------------

PKBatchSampler::PKBatchSampler(const Manifest& m, int p, int k, Rng rng)
    : manifest_(&m), p_(p), k_(k), rng_(rng) {
  std::unordered_map<int, int> slot_of;
  for (size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.split != "train") continue;
    auto it = slot_of.find(r.identity);
    if (it == slot_of.end()) {
      it = slot_of.emplace(r.identity, int(per_identity_.size())).first;
      per_identity_.emplace_back();
    }
    per_identity_[size_t(it->second)].push_back(int(i));
  }
  if (int(per_identity_.size()) < p_)
    throw ContractError("sampler needs at least " + std::to_string(p_) + " identities, manifest has " +
                        std::to_string(per_identity_.size()));
  queues_.resize(per_identity_.size());
  start_epoch();
}

void PKBatchSampler::start_epoch() {
  epoch_identities_.resize(per_identity_.size());
  for (size_t i = 0; i < per_identity_.size(); ++i) epoch_identities_[i] = int(i);
  for (size_t i = epoch_identities_.size(); i > 1; --i)
    std::swap(epoch_identities_[i - 1], epoch_identities_[size_t(rng_.uniform_int(int(i)))]);
  epoch_pos_ = 0;
}

int PKBatchSampler::draw_from(int slot) {
  auto& q = queues_[size_t(slot)];
  if (q.empty()) {
    q = per_identity_[size_t(slot)];
    for (size_t i = q.size(); i > 1; --i)
      std::swap(q[i - 1], q[size_t(rng_.uniform_int(int(i)))]);
  }
  int rec = q.back();
  q.pop_back();
  return rec;
}

std::vector<int> PKBatchSampler::next_batch() {
  std::vector<int> batch;
  batch.reserve(size_t(p_) * size_t(k_));
  for (int pi = 0; pi < p_; ++pi) {
    if (epoch_pos_ >= epoch_identities_.size()) start_epoch();
    int slot = epoch_identities_[epoch_pos_++];
    for (int ki = 0; ki < k_; ++ki) batch.push_back(draw_from(slot));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Tensor<float> augment(const Tensor<float>& image, Rng& rng, const AugmentPolicy& policy) {
  if (image.rank() != 3) throw ShapeError("augment expects a rank-3 image");
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out = image;

  if (policy.crop) {
    const int pad = policy.pad;
    int dy = rng.uniform_int(2 * pad + 1);
    int dx = rng.uniform_int(2 * pad + 1);
    Tensor<float> cropped({ch, h, w});
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sy = y + dy - pad, sx = x + dx - pad;
          float v = 0.0f;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w)
            v = out.values[size_t(c) * h * w + size_t(sy) * w + size_t(sx)];
          cropped.values[size_t(c) * h * w + size_t(y) * w + size_t(x)] = v;
        }
    out = std::move(cropped);
  }

  if (policy.flip && rng.uniform() < policy.p_flip) {
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x)
          std::swap(out.values[size_t(c) * h * w + size_t(y) * w + size_t(x)],
                    out.values[size_t(c) * h * w + size_t(y) * w + size_t(w - 1 - x)]);
  }

  if (policy.erase && rng.uniform() < policy.p_erase) {
    double mean = 0;
    for (float v : out.values) mean += v;
    mean /= double(out.values.size());
    double area = rng.uniform(policy.erase_area_min, policy.erase_area_max) * h * w;
    double aspect = rng.uniform(0.3, 3.333);
    int eh = std::max(1, std::min(h, int(std::lround(std::sqrt(area * aspect)))));
    int ew = std::max(1, std::min(w, int(std::lround(std::sqrt(area / aspect)))));
    int y0 = rng.uniform_int(h - eh + 1);
    int x0 = rng.uniform_int(w - ew + 1);
    for (int c = 0; c < ch; ++c)
      for (int y = y0; y < y0 + eh; ++y)
        for (int x = x0; x < x0 + ew; ++x)
          out.values[size_t(c) * h * w + size_t(y) * w + size_t(x)] = float(mean);
  }
  return out;
}

}  // namespace irk
