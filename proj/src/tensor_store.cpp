#include "aoglab/tensor_store.hpp"

#include "aoglab/error.hpp"
#include "aoglab/serialization.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace aoglab {

namespace {

static_assert(std::endian::native == std::endian::little, "FMAP I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};
constexpr std::uint32_t kFmapVersion = 1;

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T read(const char* what) {
    T v;
    take(&v, sizeof(T), what);
    return v;
  }
  void take(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("FMAP: truncated while reading ") + what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_{0};
};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string layer_field(std::string_view layer_id) { return "layer '" + std::string(layer_id) + "'"; }

}  // namespace

std::string_view to_string(LayerGroup g) {
  switch (g) {
    case LayerGroup::Low: return "low";
    case LayerGroup::Mid: return "mid";
    case LayerGroup::High: return "high";
  }
  return "low";
}

LayerGroup parse_layer_group(std::string_view s) {
  if (s == "low") return LayerGroup::Low;
  if (s == "mid") return LayerGroup::Mid;
  if (s == "high") return LayerGroup::High;
  throw ValidationError("group", "unknown layer group '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Geometry

int LayerGeometry::default_viz_window(int grid_h, int grid_w) { return std::min(grid_h, grid_w) >= 56 ? 3 : 1; }

void LayerGeometry::validate(const std::string& field) const {
  if (layer_id.empty()) throw ValidationError(field + ".layer_id", "must be nonempty");
  if (grid_h < 1) throw ValidationError(field + ".grid_h", "must be >= 1");
  if (grid_w < 1) throw ValidationError(field + ".grid_w", "must be >= 1");
  if (channels < 1) throw ValidationError(field + ".channels", "must be >= 1");
  if (!(stride_px >= 1)) throw ValidationError(field + ".stride_px", "must be >= 1");
  if (!(rf_size_px >= stride_px)) throw ValidationError(field + ".rf_size_px", "must be >= stride_px");
  if (viz_window < 0) throw ValidationError(field + ".viz_window", "must be >= 0");
}

Vec2 unit_position(const LayerGeometry& g, int x, int y) {
  return {g.offset_px + x * g.stride_px, g.offset_px + y * g.stride_px};
}

UnitField receptive_field(const LayerGeometry& g, int x, int y, double image_w, double image_h) {
  if (x < 0 || x >= g.grid_w || y < 0 || y >= g.grid_h)
    throw ValidationError(layer_field(g.layer_id),
                          "cell (" + std::to_string(x) + "," + std::to_string(y) + ") outside the grid");
  const Vec2 c = unit_position(g, x, y);
  return {c, Rect::centered(c, g.rf_size_px, g.rf_size_px).clipped(image_w, image_h)};
}

// ---------------------------------------------------------------------------
// FeatureMapSet

FeatureMapSet::FeatureMapSet(std::string image_id, std::vector<FeatureLayer> layers)
    : image_id_(std::move(image_id)), layers_(std::move(layers)) {}

bool FeatureMapSet::has_layer(std::string_view layer_id) const {
  return std::any_of(layers_.begin(), layers_.end(), [&](const FeatureLayer& l) { return l.geometry.layer_id == layer_id; });
}

const FeatureLayer& FeatureMapSet::layer(std::string_view layer_id) const {
  for (const auto& l : layers_)
    if (l.geometry.layer_id == layer_id) return l;
  throw NotFoundError("image '" + image_id_ + "' has no " + layer_field(layer_id));
}

const LayerGeometry& FeatureMapSet::finest() const {
  if (layers_.empty()) throw Error("feature set '" + image_id_ + "' has no layers");
  const FeatureLayer* best = &layers_.front();
  for (const auto& l : layers_)
    if (l.geometry.stride_px < best->geometry.stride_px) best = &l;
  return best->geometry;
}

float unit_response(const FeatureMapSet& fm, std::string_view layer_id, int channel, int x, int y) {
  const FeatureLayer& l = fm.layer(layer_id);
  const LayerGeometry& g = l.geometry;
  if (channel < 0 || channel >= g.channels || x < 0 || x >= g.grid_w || y < 0 || y >= g.grid_h)
    throw ValidationError(layer_field(layer_id), "index (c=" + std::to_string(channel) + ", x=" + std::to_string(x) +
                                                     ", y=" + std::to_string(y) + ") out of range");
  return l.at(channel, x, y);
}

// ---------------------------------------------------------------------------
// FMAP container

std::vector<RawLayer> decode_fmap(std::string_view bytes) {
  ByteReader in(bytes);
  char magic[4];
  in.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("FMAP: bad magic");
  const auto version = in.read<std::uint32_t>("version");
  if (version != kFmapVersion) throw FormatError("FMAP: unsupported version " + std::to_string(version));
  const auto count = in.read<std::uint32_t>("layer count");

  std::vector<RawLayer> layers;
  layers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    RawLayer l;
    const auto len = in.read<std::uint16_t>("layer id length");
    l.layer_id.resize(len);
    in.take(l.layer_id.data(), len, "layer id");
    const auto h = in.read<std::uint32_t>("grid_h");
    const auto w = in.read<std::uint32_t>("grid_w");
    const auto c = in.read<std::uint32_t>("channels");
    const std::uint64_t n = std::uint64_t(h) * w * c;
    if (h == 0 || w == 0 || c == 0 || n > (std::uint64_t(1) << 31))
      throw FormatError("FMAP: " + layer_field(l.layer_id) + " has an invalid shape");
    l.grid_h = int(h);
    l.grid_w = int(w);
    l.channels = int(c);
    if (in.remaining() < n * sizeof(float)) throw FormatError("FMAP: truncated payload in " + layer_field(l.layer_id));
    l.values.resize(n);
    in.take(l.values.data(), n * sizeof(float), "tensor payload");
    layers.push_back(std::move(l));
  }
  if (!in.done()) throw FormatError("FMAP: trailing bytes after last layer");
  return layers;
}

std::string encode_fmap(std::span<const RawLayer> layers) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kFmapVersion);
  put<std::uint32_t>(out, std::uint32_t(layers.size()));
  for (const RawLayer& l : layers) {
    if (l.layer_id.size() > 0xFFFF) throw FormatError("FMAP: layer id too long");
    if (l.values.size() != std::size_t(l.grid_h) * l.grid_w * l.channels)
      throw FormatError("FMAP: " + layer_field(l.layer_id) + " payload does not match its shape");
    put<std::uint16_t>(out, std::uint16_t(l.layer_id.size()));
    out += l.layer_id;
    put<std::uint32_t>(out, std::uint32_t(l.grid_h));
    put<std::uint32_t>(out, std::uint32_t(l.grid_w));
    put<std::uint32_t>(out, std::uint32_t(l.channels));
    out.append(reinterpret_cast<const char*>(l.values.data()), l.values.size() * sizeof(float));
  }
  return out;
}

std::vector<RawLayer> read_fmap(const std::filesystem::path& path) { return decode_fmap(read_text_file(path)); }

void write_fmap(std::span<const RawLayer> layers, const std::filesystem::path& path) {
  write_text_file(path, encode_fmap(layers));
}

void write_feature_set(const FeatureMapSet& fm, const std::filesystem::path& path) {
  std::vector<RawLayer> raw;
  for (const auto& l : fm.layers()) {
    const auto& g = l.geometry;
    raw.push_back({g.layer_id, g.grid_h, g.grid_w, g.channels,
                   std::vector<float>(l.values.data(), l.values.data() + l.values.size())});
  }
  write_fmap(raw, path);
}

namespace {

FeatureMapSet validate_layers(std::vector<RawLayer> raw, std::span<const LayerGeometry> geometries, std::string image_id) {
  std::vector<FeatureLayer> layers;
  for (const LayerGeometry& g : geometries) {
    auto it = std::find_if(raw.begin(), raw.end(), [&](const RawLayer& r) { return r.layer_id == g.layer_id; });
    if (it == raw.end()) throw ValidationError(layer_field(g.layer_id), "missing from feature file");
    if (it->grid_h != g.grid_h || it->grid_w != g.grid_w || it->channels != g.channels)
      throw ValidationError(layer_field(g.layer_id),
                            "shape mismatch: file has " + std::to_string(it->grid_h) + "x" + std::to_string(it->grid_w) +
                                "x" + std::to_string(it->channels) + ", geometry expects " + std::to_string(g.grid_h) +
                                "x" + std::to_string(g.grid_w) + "x" + std::to_string(g.channels));
    FeatureLayer l{g, Eigen::Map<const ActivationMatrix>(it->values.data(), g.grid_h * g.grid_w, g.channels)};
    for (Eigen::Index r = 0; r < l.values.rows(); ++r)
      for (int c = 0; c < g.channels; ++c)
        if (!std::isfinite(l.values(r, c)))
          throw ValidationError(layer_field(g.layer_id) + " channel " + std::to_string(c),
                                "non-finite value at cell (" + std::to_string(r % g.grid_w) + "," +
                                    std::to_string(r / g.grid_w) + ")");
    layers.push_back(std::move(l));
  }
  for (const RawLayer& r : raw)
    if (std::none_of(geometries.begin(), geometries.end(), [&](const LayerGeometry& g) { return g.layer_id == r.layer_id; }))
      throw ValidationError(layer_field(r.layer_id), "not declared in the layer geometries");
  return FeatureMapSet(std::move(image_id), std::move(layers));
}

}  // namespace

FeatureMapSet load_feature_set(const std::filesystem::path& path, std::span<const LayerGeometry> geometries,
                               std::string image_id, bool normalize) {
  if (image_id.empty()) image_id = path.stem().string();
  FeatureMapSet fm = validate_layers(read_fmap(path), geometries, std::move(image_id));
  if (normalize) normalize_channels(std::span<FeatureMapSet>(&fm, 1));
  return fm;
}

void normalize_channels(std::span<FeatureMapSet> sets) {
  if (sets.empty()) return;
  const std::size_t n_layers = sets.front().layers().size();
  for (std::size_t li = 0; li < n_layers; ++li) {
    const int channels = sets.front().layers()[li].geometry.channels;
    Eigen::RowVectorXf max = Eigen::RowVectorXf::Zero(channels);
    for (auto& fm : sets) {
      auto& v = fm.layers().at(li).values;
      if (v.cols() != channels) throw ValidationError(layer_field(fm.layers()[li].geometry.layer_id), "channel count differs across images");
      v = v.cwiseMax(0.0f);
      max = max.cwiseMax(v.colwise().maxCoeff());
    }
    for (auto& fm : sets) {
      auto& v = fm.layers()[li].values;
      for (int c = 0; c < channels; ++c)
        if (max(c) > 0.0f) v.col(c) /= max(c);
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest

const std::vector<std::string>& LayerGroups::members(LayerGroup g) const {
  switch (g) {
    case LayerGroup::Low: return low;
    case LayerGroup::Mid: return mid;
    case LayerGroup::High: return high;
  }
  return low;
}

LayerGroup LayerGroups::group_of(std::string_view layer_id) const {
  for (LayerGroup g : {LayerGroup::Low, LayerGroup::Mid, LayerGroup::High}) {
    const auto& m = members(g);
    if (std::find(m.begin(), m.end(), layer_id) != m.end()) return g;
  }
  throw NotFoundError(layer_field(layer_id) + " belongs to no layer group");
}

void ImageRecord::validate(const std::string& field) const {
  if (image_id.empty()) throw ValidationError(field + ".image_id", "must be nonempty");
  if (width_px <= 0 || height_px <= 0) throw ValidationError(field + ".width_px", "image dimensions must be positive");
  const Rect img = image_rect();
  if (object_box.w <= 0 || object_box.h <= 0 || object_box.x < 0 || object_box.y < 0 || !img.contains(object_box))
    throw ValidationError(field + ".object_box", "must be a nonempty box within the image");
  for (std::size_t i = 0; i < part_annotations.size(); ++i) {
    const auto& a = part_annotations[i];
    const std::string f = field + ".part_annotations[" + std::to_string(i) + "]";
    if (a.template_id.empty()) throw ValidationError(f + ".template_id", "must be nonempty");
    if (a.part_box.w <= 0 || a.part_box.h <= 0 || !object_box.contains(a.part_box))
      throw ValidationError(f + ".part_box", "must be a nonempty box within object_box");
  }
  if (split != "train" && split != "test") throw ValidationError(field + ".split", "must be 'train' or 'test'");
}

const ImageRecord& DatasetManifest::record(std::string_view image_id) const {
  for (const auto& r : records)
    if (r.image_id == image_id) return r;
  throw NotFoundError("unknown image '" + std::string(image_id) + "'");
}

const LayerGeometry& DatasetManifest::geometry(std::string_view layer_id) const {
  for (const auto& g : layer_geometries)
    if (g.layer_id == layer_id) return g;
  throw NotFoundError("unknown " + layer_field(layer_id));
}

void DatasetManifest::validate() const {
  if (layer_geometries.empty()) throw ValidationError("layer_geometries", "at least one layer required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < layer_geometries.size(); ++i) {
    const std::string f = "layer_geometries[" + std::to_string(i) + "]";
    layer_geometries[i].validate(f);
    if (!ids.insert(layer_geometries[i].layer_id).second) throw ValidationError(f + ".layer_id", "duplicate layer id");
  }
  std::multiset<std::string> grouped;
  for (LayerGroup g : {LayerGroup::Low, LayerGroup::Mid, LayerGroup::High})
    for (const auto& id : layer_groups.members(g)) grouped.insert(id);
  for (const auto& id : grouped) {
    if (!ids.count(id)) throw ValidationError("layer_groups", "unknown layer '" + id + "'");
    if (grouped.count(id) != 1) throw ValidationError("layer_groups", "layer '" + id + "' assigned more than once");
  }
  for (const auto& id : ids)
    if (!grouped.count(id)) throw ValidationError("layer_groups", "layer '" + id + "' is not assigned to a group");
  std::set<std::string> images;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string f = "records[" + std::to_string(i) + "]";
    records[i].validate(f);
    if (!images.insert(records[i].image_id).second) throw ValidationError(f + ".image_id", "duplicate image id");
    if (!feature_paths.count(records[i].image_id)) throw ValidationError("feature_paths." + records[i].image_id, "missing feature path");
  }
}

Json rect_to_json(const Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

Rect rect_from_json(const Json& j, const std::string& field) {
  return {required<double>(j, "x", field), required<double>(j, "y", field), required<double>(j, "w", field),
          required<double>(j, "h", field)};
}

Json point_to_json(const Vec2& p) { return {{"x", p.x()}, {"y", p.y()}}; }

Vec2 point_from_json(const Json& j, const std::string& field) {
  return {required<double>(j, "x", field), required<double>(j, "y", field)};
}

Json to_json(const LayerGeometry& g) {
  return {{"layer_id", g.layer_id},   {"grid_h", g.grid_h},         {"grid_w", g.grid_w},
          {"channels", g.channels},   {"stride_px", g.stride_px},   {"rf_size_px", g.rf_size_px},
          {"offset_px", g.offset_px}, {"viz_window", g.viz_window}};
}

LayerGeometry layer_geometry_from_json(const Json& j, const std::string& field) {
  LayerGeometry g;
  g.layer_id = required<std::string>(j, "layer_id", field);
  g.grid_h = required<int>(j, "grid_h", field);
  g.grid_w = required<int>(j, "grid_w", field);
  g.channels = required<int>(j, "channels", field);
  g.stride_px = required<double>(j, "stride_px", field);
  g.rf_size_px = required<double>(j, "rf_size_px", field);
  g.offset_px = j.contains("offset_px") ? required<double>(j, "offset_px", field) : 0.0;
  g.viz_window = j.contains("viz_window") ? required<int>(j, "viz_window", field)
                                          : LayerGeometry::default_viz_window(g.grid_h, g.grid_w);
  g.validate(field);
  return g;
}

Json to_json(const ImageRecord& r) {
  Json anns = Json::array();
  for (const auto& a : r.part_annotations) anns.push_back({{"template_id", a.template_id}, {"part_box", rect_to_json(a.part_box)}});
  return {{"image_id", r.image_id},
          {"width_px", r.width_px},
          {"height_px", r.height_px},
          {"object_box", rect_to_json(r.object_box)},
          {"part_annotations", anns},
          {"split", r.split}};
}

ImageRecord image_record_from_json(const Json& j, const std::string& field) {
  ImageRecord r;
  r.image_id = required<std::string>(j, "image_id", field);
  r.width_px = required<int>(j, "width_px", field);
  r.height_px = required<int>(j, "height_px", field);
  r.object_box = j.contains("object_box") ? rect_from_json(j.at("object_box"), field + ".object_box") : r.image_rect();
  if (j.contains("part_annotations")) {
    const Json& anns = j.at("part_annotations");
    for (std::size_t i = 0; i < anns.size(); ++i) {
      const std::string f = field + ".part_annotations[" + std::to_string(i) + "]";
      r.part_annotations.push_back({required<std::string>(anns[i], "template_id", f), rect_from_json(anns[i].at("part_box"), f + ".part_box")});
    }
  }
  if (j.contains("split")) r.split = required<std::string>(j, "split", field);
  return r;
}

Json to_json(const DatasetManifest& m) {
  Json geoms = Json::array();
  for (const auto& g : m.layer_geometries) geoms.push_back(to_json(g));
  Json records = Json::array();
  for (const auto& r : m.records) records.push_back(to_json(r));
  Json sal = Json::array();
  for (const auto& s : m.saliency_paths) sal.push_back({{"image_id", s.image_id}, {"pattern_id", s.pattern_id}, {"path", s.path}});
  return {{"manifest_version", 1},
          {"category", m.category},
          {"part", m.part},
          {"normalize", m.normalize},
          {"layer_geometries", geoms},
          {"layer_groups", {{"low", m.layer_groups.low}, {"mid", m.layer_groups.mid}, {"high", m.layer_groups.high}}},
          {"records", records},
          {"feature_paths", m.feature_paths},
          {"saliency_paths", sal}};
}

DatasetManifest manifest_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("", "manifest must be a JSON object");
  if (j.contains("manifest_version") && j.at("manifest_version") != 1)
    throw ValidationError("manifest_version", "unsupported version");
  DatasetManifest m;
  m.category = required<std::string>(j, "category", "");
  if (j.contains("part")) m.part = required<std::string>(j, "part", "");
  if (j.contains("normalize")) m.normalize = required<bool>(j, "normalize", "");
  const Json& geoms = j.at("layer_geometries");
  for (std::size_t i = 0; i < geoms.size(); ++i)
    m.layer_geometries.push_back(layer_geometry_from_json(geoms[i], "layer_geometries[" + std::to_string(i) + "]"));
  const Json& groups = j.at("layer_groups");
  for (const char* key : {"low", "mid", "high"})
    if (groups.contains(key)) {
      auto v = required<std::vector<std::string>>(groups, key, "layer_groups");
      (std::string(key) == "low" ? m.layer_groups.low : std::string(key) == "mid" ? m.layer_groups.mid : m.layer_groups.high) = v;
    }
  const Json& records = j.at("records");
  for (std::size_t i = 0; i < records.size(); ++i)
    m.records.push_back(image_record_from_json(records[i], "records[" + std::to_string(i) + "]"));
  m.feature_paths = required<std::map<std::string, std::string>>(j, "feature_paths", "");
  if (j.contains("saliency_paths"))
    for (const Json& s : j.at("saliency_paths"))
      m.saliency_paths.push_back({required<std::string>(s, "image_id", "saliency_paths"), required<std::string>(s, "pattern_id", "saliency_paths"),
                                  required<std::string>(s, "path", "saliency_paths")});
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_text_file(path, to_json(manifest).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Dataset

const FeatureMapSet& Dataset::features_for(std::string_view image_id) const {
  auto it = features.find(std::string(image_id));
  if (it == features.end()) throw NotFoundError("no features for image '" + std::string(image_id) + "'");
  return it->second;
}

std::vector<const ImageRecord*> Dataset::split(std::string_view name) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : manifest.records)
    if (r.split == name) out.push_back(&r);
  return out;
}

std::shared_ptr<const Dataset> make_dataset(DatasetManifest manifest, std::vector<FeatureMapSet> features, std::filesystem::path root) {
  manifest.validate();
  if (manifest.normalize) normalize_channels(features);
  auto ds = std::make_shared<Dataset>();
  for (auto& fm : features) {
    const std::string id = fm.image_id();
    ds->features.emplace(id, std::move(fm));
  }
  for (const auto& r : manifest.records)
    if (!ds->features.count(r.image_id)) throw ValidationError("feature_paths." + r.image_id, "features not loaded");
  ds->manifest = std::move(manifest);
  ds->root = std::move(root);
  return ds;
}

std::shared_ptr<const Dataset> load_dataset(const std::filesystem::path& manifest_path) {
  DatasetManifest m = load_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  std::vector<FeatureMapSet> features;
  for (const auto& r : m.records) {
    std::filesystem::path p = m.feature_paths.at(r.image_id);
    if (p.is_relative()) p = root / p;
    features.push_back(load_feature_set(p, m.layer_geometries, r.image_id, false));
  }
  return make_dataset(std::move(m), std::move(features), root);
}

// ---------------------------------------------------------------------------
// Small file utilities

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), std::streamsize(text.size()));
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[i] = kHex[h & 0xF];
  return out;
}

}  // namespace aoglab
