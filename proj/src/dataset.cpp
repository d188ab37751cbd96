#include "emofuse/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

#include "emofuse/tensor_io.hpp"

namespace emofuse {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

bool Sample::has_complete_precomputed() const {
  return std::all_of(kModalityKeys.begin(), kModalityKeys.end(),
                     [&](std::string_view k) { return precomputed.count(std::string(k)) > 0; });
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

namespace {

[[noreturn]] void invalid(const Sample& s, const std::string& what) {
  throw ValidationError("sample '" + s.id + "': " + what);
}

bool in_unit(float v) { return v >= 0.0f && v <= 1.0f; }

}  // namespace

void validate_sample(const Sample& s) {
  if (s.id.empty()) throw ValidationError("sample with empty id");
  const auto& a = s.annotation;
  bool any = false;
  for (std::size_t i = 0; i < kNumDiscrete; ++i) {
    if (a.disc[i] > 1) invalid(s, "disc entries must be 0 or 1");
    any = any || a.disc[i] == 1;
  }
  if (!any) invalid(s, "no discrete category is set");
  for (float c : a.cont) {
    if (!in_unit(c)) invalid(s, "continuous labels must lie in [0, 1]");
  }
  if (!s.image && !s.has_complete_precomputed()) {
    invalid(s, "needs an image or precomputed features for every modality");
  }
  if (s.image) {
    if (s.image->channels != 3) invalid(s, "image must have 3 channels");
    if (!std::all_of(s.image->data.begin(), s.image->data.end(), in_unit)) {
      invalid(s, "image pixel values must lie in [0, 1]");
    }
    for (const auto& [name, box] : {std::pair{"body_bbox", s.body_bbox}, std::pair{"face_bbox", s.face_bbox}}) {
      if (box && !bbox_inside(*box, s.image->height, s.image->width)) {
        invalid(s, std::string(name) + " lies outside the " + std::to_string(s.image->height) + "x" +
                       std::to_string(s.image->width) + " image");
      }
    }
  }
  if (s.depth) {
    if (s.depth->channels != 1) invalid(s, "depth map must have 1 channel");
    if (!std::all_of(s.depth->data.begin(), s.depth->data.end(), in_unit)) {
      invalid(s, "depth values must lie in [0, 1]");
    }
  }
  if (s.pose) {
    for (const auto& k : *s.pose) {
      if (!k.missing() && !(in_unit(k.x) && in_unit(k.y))) {
        invalid(s, "pose coordinates must lie in [0, 1]");
      }
    }
  }
  for (const auto& [name, vec] : s.precomputed) {
    if (std::find(kModalityKeys.begin(), kModalityKeys.end(), name) == kModalityKeys.end()) {
      invalid(s, "unknown precomputed modality '" + name + "'");
    }
    if (vec.empty()) invalid(s, "precomputed '" + name + "' is empty");
  }
}

std::array<double, kNumDiscrete> compute_priors(const std::vector<Sample>& samples) {
  std::array<double, kNumDiscrete> priors{};
  if (samples.empty()) {
    priors.fill(1.0 / kNumDiscrete);
    return priors;
  }
  std::array<std::size_t, kNumDiscrete> counts{};
  for (const auto& s : samples)
    for (std::size_t i = 0; i < kNumDiscrete; ++i) counts[i] += s.annotation.disc[i];
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < kNumDiscrete; ++i) {
    priors[i] = counts[i] > 0 ? counts[i] / n : 0.5 / n;
  }
  return priors;
}

std::array<DatasetManifest, 3> split_70_15_15(const DatasetManifest& all) {
  const auto n = static_cast<std::int64_t>(all.samples.size());
  const auto n_train = std::llround(0.7 * static_cast<double>(n));
  const auto n_val = std::min<std::int64_t>(n - n_train, std::llround(0.15 * static_cast<double>(n)));
  const std::array<std::int64_t, 4> cut = {0, n_train, n_train + n_val, n};
  std::array<DatasetManifest, 3> out;
  for (int k = 0; k < 3; ++k) {
    out[k].split = static_cast<Split>(k);
    out[k].samples.assign(all.samples.begin() + cut[k], all.samples.begin() + cut[k + 1]);
    out[k].category_priors = compute_priors(out[k].samples);
  }
  return out;
}

namespace {

BBox parse_bbox(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bbox must be [x, y, w, h]");
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw std::invalid_argument("bbox entries must be integers");
  }
  return BBox{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

Pose parse_pose(const json& j) {
  if (!j.is_array() || j.size() != kNumJoints) {
    throw std::invalid_argument("pose must list " + std::to_string(kNumJoints) + " joints");
  }
  Pose pose;
  for (std::size_t i = 0; i < kNumJoints; ++i) {
    if (j[i].is_null()) continue;
    if (!j[i].is_array() || j[i].size() != 2) throw std::invalid_argument("joint must be [x, y] or null");
    pose[i] = Keypoint{j[i][0].get<float>(), j[i][1].get<float>()};
  }
  return pose;
}

std::vector<float> flatten_f32(const fs::path& path) { return read_f32(path).values; }

Sample parse_record(const json& j, const fs::path& base) {
  if (!j.is_object()) throw std::invalid_argument("record must be a JSON object");
  Sample s;
  s.id = j.at("id").get<std::string>();

  const auto& disc = j.at("disc");
  if (!disc.is_array() || disc.size() != kNumDiscrete) {
    throw std::invalid_argument("disc must hold " + std::to_string(kNumDiscrete) + " integers");
  }
  for (std::size_t i = 0; i < kNumDiscrete; ++i) {
    const int v = disc[i].get<int>();
    if (v != 0 && v != 1) throw std::invalid_argument("disc entries must be 0 or 1");
    s.annotation.disc[i] = static_cast<std::uint8_t>(v);
  }
  const auto& cont = j.at("cont");
  if (!cont.is_array() || cont.size() != kNumContinuous) {
    throw std::invalid_argument("cont must hold " + std::to_string(kNumContinuous) + " numbers");
  }
  float lo = 0.0f, hi = 1.0f;
  if (j.contains("cont_range")) {
    const auto& r = j["cont_range"];
    if (!r.is_array() || r.size() != 2 || !(r[1].get<float>() > r[0].get<float>())) {
      throw std::invalid_argument("cont_range must be [low, high] with high > low");
    }
    lo = r[0].get<float>();
    hi = r[1].get<float>();
  }
  for (std::size_t k = 0; k < kNumContinuous; ++k) {
    s.annotation.cont[k] = (cont[k].get<float>() - lo) / (hi - lo);
  }

  if (j.contains("image") && !j["image"].is_null()) {
    s.image_path = j["image"].get<std::string>();
    s.image = load_image(base / s.image_path);
  }
  if (j.contains("depth") && !j["depth"].is_null()) {
    s.depth_path = j["depth"].get<std::string>();
    s.depth = load_image(base / s.depth_path);
  }
  if (j.contains("face_bbox") && !j["face_bbox"].is_null()) s.face_bbox = parse_bbox(j["face_bbox"]);
  if (j.contains("body_bbox") && !j["body_bbox"].is_null()) s.body_bbox = parse_bbox(j["body_bbox"]);
  if (j.contains("pose") && !j["pose"].is_null()) s.pose = parse_pose(j["pose"]);
  if (j.contains("precomputed") && !j["precomputed"].is_null()) {
    for (const auto& [name, rel] : j["precomputed"].items()) {
      s.precomputed_paths[name] = rel.get<std::string>();
      s.precomputed[name] = flatten_f32(base / rel.get<std::string>());
    }
  }
  return s;
}

ordered_json bbox_json(const std::optional<BBox>& b) {
  if (!b) return nullptr;
  return ordered_json::array({b->x, b->y, b->w, b->h});
}

ordered_json record_json(const Sample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["image"] = s.image_path.empty() ? ordered_json(nullptr) : ordered_json(s.image_path);
  j["depth"] = s.depth_path.empty() ? ordered_json(nullptr) : ordered_json(s.depth_path);
  j["face_bbox"] = bbox_json(s.face_bbox);
  j["body_bbox"] = bbox_json(s.body_bbox);
  if (s.pose) {
    ordered_json p = ordered_json::array();
    for (const auto& k : *s.pose) {
      p.push_back(k.missing() ? ordered_json(nullptr) : ordered_json::array({k.x, k.y}));
    }
    j["pose"] = p;
  } else {
    j["pose"] = nullptr;
  }
  j["disc"] = ordered_json::array();
  for (auto v : s.annotation.disc) j["disc"].push_back(static_cast<int>(v));
  j["cont"] = ordered_json::array();
  for (auto v : s.annotation.cont) j["cont"].push_back(v);
  ordered_json pre = ordered_json::object();
  for (const auto& [name, path] : s.precomputed_paths) pre[name] = path;
  j["precomputed"] = pre;
  return j;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, Split fallback_split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  m.split = parse_split(path.stem().string()).value_or(fallback_split);
  const fs::path base = path.parent_path();
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s;
    try {
      s = parse_record(json::parse(line), base);
    } catch (const std::exception& e) {
      throw ManifestError(lineno, e.what());
    }
    validate_sample(s);
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
    m.samples.push_back(std::move(s));
  }
  m.category_priors = compute_priors(m.samples);
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& s : manifest.samples) out << record_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

void materialize_assets(DatasetManifest& manifest, const fs::path& manifest_dir,
                        const fs::path& asset_dir) {
  fs::create_directories(asset_dir);
  for (auto& s : manifest.samples) {
    if (s.image && s.image_path.empty()) {
      const fs::path p = asset_dir / (s.id + "_rgb.f32");
      save_image_f32(p, *s.image);
      s.image_path = fs::relative(p, manifest_dir).generic_string();
    }
    if (s.depth && s.depth_path.empty()) {
      const fs::path p = asset_dir / (s.id + "_depth.f32");
      save_image_f32(p, *s.depth);
      s.depth_path = fs::relative(p, manifest_dir).generic_string();
    }
    for (const auto& [name, vec] : s.precomputed) {
      if (s.precomputed_paths.count(name)) continue;
      const fs::path p = asset_dir / (s.id + "_" + name + ".f32");
      write_f32(p, F32Array{Shape{static_cast<std::int64_t>(vec.size())}, vec});
      s.precomputed_paths[name] = fs::relative(p, manifest_dir).generic_string();
    }
  }
}

std::pair<std::optional<Image>, std::optional<Image>> crop_regions(const Sample& sample) {
  std::optional<Image> face, body;
  if (sample.image && sample.face_bbox) {
    face = resize_bilinear(crop(*sample.image, *sample.face_bbox), kFaceSize, kFaceSize);
  }
  if (sample.image && sample.body_bbox) {
    body = resize_bilinear(crop(*sample.image, *sample.body_bbox), kBodySize, kBodySize);
  }
  return {std::move(face), std::move(body)};
}

std::optional<Image> context_image(const Sample& sample) {
  if (!sample.image) return std::nullopt;
  if (!sample.body_bbox) return sample.image;
  return blank_region(*sample.image, *sample.body_bbox);
}

}  // namespace emofuse
