#include "carfield/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "carfield/errors.hpp"
#include "carfield/json_strict.hpp"
#include "carfield/log.hpp"
#include "carfield/rng.hpp"

namespace carfield {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool safe_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

void check_rel_path(const std::string& p, const char* what) {
  if (p.empty()) throw DataError(strf("%s path must be non-empty", what));
  if (p.front() == '/' || p.find('\\') != std::string::npos) {
    throw DataError(strf("%s path must be relative with forward slashes (got \"%s\")", what,
                         p.c_str()));
  }
  std::stringstream ss(p);
  std::string seg;
  while (std::getline(ss, seg, '/')) {
    if (seg.empty() || seg == "." || seg == "..") {
      throw DataError(strf("%s path must not contain empty, \".\" or \"..\" segments (got \"%s\")",
                           what, p.c_str()));
    }
  }
}

// Integer pixel hull of a float box clamped to a w x h image.
struct CropRect {
  Box2D clamped;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

CropRect integer_crop(const Box2D& b, int w, int h, const std::string& where) {
  if (!b.valid()) throw DataError(where + "box2d must have positive extent");
  CropRect c;
  c.clamped.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(w));
  c.clamped.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(w));
  c.clamped.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(h));
  c.clamped.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(h));
  if (!(c.clamped.x_min < c.clamped.x_max && c.clamped.y_min < c.clamped.y_max)) {
    throw DataError(where + "box2d lies outside the image");
  }
  c.x0 = static_cast<int>(std::floor(c.clamped.x_min));
  c.y0 = static_cast<int>(std::floor(c.clamped.y_min));
  c.x1 = std::min(static_cast<int>(std::ceil(c.clamped.x_max)), w);
  c.y1 = std::min(static_cast<int>(std::ceil(c.clamped.y_max)), h);
  return c;
}

Image crop_image(const Image& src, int x0, int y0, int x1, int y1) {
  Image out = Image::zeros(x1 - x0, y1 - y0, src.channels);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < src.channels; ++c) out.at(x - x0, y - y0, c) = src.at(x, y, c);
    }
  }
  return out;
}

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out = Image::zeros(img.width, img.height, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, 0);
    }
  }
  return out;
}

Intrinsics read_intrinsics(const json& j, const std::string& prefix, const std::string& path) {
  StrictWalker<DataError> k(j, prefix, path);
  Intrinsics out;
  out.focal_x = k.req_double("fx");
  out.focal_y = k.req_double("fy");
  out.principal_x = k.req_double("cx");
  out.principal_y = k.req_double("cy");
  k.finish();
  return out;
}

Box3D read_box3d(const json& j, const std::string& prefix, const std::string& path) {
  StrictWalker<DataError> b(j, prefix, path);
  Box3D out;
  std::vector<double> c = b.req_double_list("center", 3);
  out.center = Vec3(c[0], c[1], c[2]);
  std::vector<double> d = b.req_double_list("dims", 3);
  out.dims.length = d[0];
  out.dims.height = d[1];
  out.dims.width = d[2];
  out.yaw = b.req_double("yaw");
  b.finish();
  return out;
}

Vec3 hsv_to_rgb(double h_deg, double s, double v) {
  const double h = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

std::string to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::kKittiMot: return "KITTI-MOT";
    case SourceTag::kKittiDet: return "KITTI-DET";
    case SourceTag::kDvm: return "DVM";
    case SourceTag::kSynth: return "SYNTH";
  }
  throw InvalidArgument("unhandled source tag");
}

SourceTag parse_source_tag(const std::string& s) {
  if (s == "KITTI-MOT") return SourceTag::kKittiMot;
  if (s == "KITTI-DET") return SourceTag::kKittiDet;
  if (s == "DVM") return SourceTag::kDvm;
  if (s == "SYNTH") return SourceTag::kSynth;
  throw DataError("unknown source tag \"" + s + "\"");
}

void PatchRecord::validate() const {
  if (!safe_id(id)) {
    throw DataError("record id must be non-empty and use only [A-Za-z0-9._-] (got \"" + id + "\")");
  }
  check_rel_path(patch_path, "patch");
  check_rel_path(mask_path, "mask");
  if (image_width < 1 || image_height < 1) {
    throw DataError(strf("image_size must be positive (got %d x %d)", image_width, image_height));
  }
  if (crop_x < 0 || crop_y < 0 || crop_x >= image_width || crop_y >= image_height) {
    throw DataError(strf("crop (%d, %d) lies outside the %d x %d image", crop_x, crop_y,
                         image_width, image_height));
  }
  if (!(k.focal_x > 0.0) || !(k.focal_y > 0.0)) {
    throw DataError(strf("intrinsics must have positive focals (got fx=%g fy=%g)", k.focal_x,
                         k.focal_y));
  }
  if (!box2d.valid()) throw DataError("box2d must have positive extent");
  if (box2d.x_min < 0 || box2d.y_min < 0 || box2d.x_max > image_width ||
      box2d.y_max > image_height) {
    throw DataError(strf("box2d [%g, %g, %g, %g] leaves the %d x %d image bounds", box2d.x_min,
                         box2d.y_min, box2d.x_max, box2d.y_max, image_width, image_height));
  }
  for (double c : {conf2d, conf3d, confseg}) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw DataError(strf("confidences must lie in [0, 1] (got det2d=%g det3d=%g seg=%g)", conf2d,
                           conf3d, confseg));
    }
  }
  try {
    project_box3d(box3d, k);  // valid dims, every corner in front of the camera
  } catch (const InvalidArgument& e) {
    throw DataError(e.what());
  }
}

json record_to_json(const PatchRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["patch"] = rec.patch_path;
  j["mask"] = rec.mask_path;
  j["image_size"] = {rec.image_width, rec.image_height};
  j["crop"] = {rec.crop_x, rec.crop_y};
  j["intrinsics"] = {{"fx", rec.k.focal_x},
                     {"fy", rec.k.focal_y},
                     {"cx", rec.k.principal_x},
                     {"cy", rec.k.principal_y}};
  j["box2d"] = {rec.box2d.x_min, rec.box2d.y_min, rec.box2d.x_max, rec.box2d.y_max};
  j["box3d"] = {{"center", {rec.box3d.center.x(), rec.box3d.center.y(), rec.box3d.center.z()}},
                {"dims", {rec.box3d.dims.length, rec.box3d.dims.height, rec.box3d.dims.width}},
                {"yaw", rec.box3d.yaw}};
  j["conf"] = {{"det2d", rec.conf2d}, {"det3d", rec.conf3d}, {"seg", rec.confseg}};
  if (!rec.instance.empty()) j["instance"] = rec.instance;
  j["source"] = to_string(rec.source);
  return j;
}

PatchRecord record_from_json(const json& j, const std::string& where) {
  StrictWalker<DataError> o(j, where, "");
  PatchRecord rec;
  rec.id = o.req_string("id");
  rec.patch_path = o.req_string("patch");
  rec.mask_path = o.req_string("mask");
  std::vector<int> size = o.req_int_list("image_size", 2);
  rec.image_width = size[0];
  rec.image_height = size[1];
  std::vector<int> crop = o.req_int_list("crop", 2);
  rec.crop_x = crop[0];
  rec.crop_y = crop[1];
  rec.k = read_intrinsics(o.req_child("intrinsics"), where, "intrinsics");
  std::vector<double> b2 = o.req_double_list("box2d", 4);
  rec.box2d = Box2D{b2[0], b2[1], b2[2], b2[3]};
  rec.box3d = read_box3d(o.req_child("box3d"), where, "box3d");
  {
    StrictWalker<DataError> c(o.req_child("conf"), where, "conf");
    rec.conf2d = c.req_double("det2d");
    rec.conf3d = c.req_double("det3d");
    rec.confseg = c.req_double("seg");
    c.finish();
  }
  o.read_string("instance", rec.instance);
  const std::string source = o.req_string("source");
  o.finish();
  try {
    rec.source = parse_source_tag(source);
    rec.validate();
  } catch (const Error& e) {
    throw DataError(where + e.what());
  }
  return rec;
}

std::vector<PatchRecord> load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<PatchRecord> out;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = strf("%s:%d: ", manifest_path.c_str(), lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + strf("parse error at byte %zu: %s",
                                   static_cast<size_t>(e.byte), e.what()));
    }
    PatchRecord rec = record_from_json(j, where);
    if (!ids.insert(rec.id).second) {
      throw DataError(where + "duplicate record id \"" + rec.id + "\"");
    }
    if (!fs::exists(base / rec.patch_path)) {
      throw DataError(where + strf("record \"%s\": missing patch file \"%s\"", rec.id.c_str(),
                                   rec.patch_path.c_str()));
    }
    if (!fs::exists(base / rec.mask_path)) {
      throw DataError(where + strf("record \"%s\": missing mask file \"%s\"", rec.id.c_str(),
                                   rec.mask_path.c_str()));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_dataset(const std::vector<PatchRecord>& records, const std::string& manifest_path) {
  const fs::path parent = fs::path(manifest_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + manifest_path);
  std::set<std::string> ids;
  for (const PatchRecord& rec : records) {
    try {
      rec.validate();
    } catch (const Error& e) {
      throw DataError("record \"" + rec.id + "\": " + e.what());
    }
    if (!ids.insert(rec.id).second) throw DataError("duplicate record id \"" + rec.id + "\"");
    out << record_to_json(rec).dump() << '\n';
  }
  out.flush();
  if (!out) throw DataError("failed writing manifest " + manifest_path);
}

LoadedRecord load_record_images(const std::string& base_dir, const PatchRecord& rec) {
  LoadedRecord lr;
  lr.rec = rec;
  const std::string ctx = "record \"" + rec.id + "\": ";
  try {
    lr.patch = read_png((fs::path(base_dir) / rec.patch_path).string());
    lr.mask = read_mask_png((fs::path(base_dir) / rec.mask_path).string());
  } catch (const Error& e) {
    throw DataError(ctx + e.what());
  }
  if (lr.patch.channels != 3) throw DataError(ctx + "patch must be RGB");
  if (lr.mask.width != lr.patch.width || lr.mask.height != lr.patch.height) {
    throw DataError(ctx + strf("mask resolution %d x %d does not match patch %d x %d",
                               lr.mask.width, lr.mask.height, lr.patch.width, lr.patch.height));
  }
  if (rec.crop_x + lr.patch.width > rec.image_width ||
      rec.crop_y + lr.patch.height > rec.image_height) {
    throw DataError(ctx + strf("patch %d x %d at crop (%d, %d) extends past the %d x %d image",
                               lr.patch.width, lr.patch.height, rec.crop_x, rec.crop_y,
                               rec.image_width, rec.image_height));
  }
  return lr;
}

TrainingSample to_training_sample(const LoadedRecord& lr, int view_id) {
  TrainingSample s;
  s.patch = lr.patch;
  s.mask = lr.mask;
  s.k = lr.rec.k;
  s.k.principal_x -= lr.rec.crop_x;
  s.k.principal_y -= lr.rec.crop_y;
  s.canonical_from_camera = canonical_from_camera(lr.rec.box3d);
  s.instance = lr.rec.instance.empty() ? lr.rec.id : lr.rec.instance;
  s.view_id = view_id;
  return s;
}

std::vector<TrainingSample> load_training_set(const std::string& manifest_path) {
  const std::vector<PatchRecord> records = load_dataset(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  std::vector<TrainingSample> out;
  out.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    out.push_back(to_training_sample(load_record_images(base, records[i]), static_cast<int>(i)));
  }
  return out;
}

double record_azimuth(const PatchRecord& rec) {
  const Eigen::Vector4d cam = canonical_from_camera(rec.box3d) * Eigen::Vector4d(0, 0, 0, 1);
  return std::atan2(cam.z(), cam.x());
}

// ---- filter pipeline --------------------------------------------------

void FilterConfig::validate() const {
  const std::pair<double, const char*> unit_scale[] = {
      {iou_min, "iou_min"},   {mask_ratio_min, "mask_ratio_min"}, {conf2d_min, "conf2d_min"},
      {conf3d_min, "conf3d_min"}, {confseg_min, "confseg_min"},   {review_band, "review_band"}};
  for (const auto& [value, name] : unit_scale) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw ConfigError(strf("filter: %s must lie in [0, 1] (got %g)", name, value));
    }
  }
  if (min_patch_pixels < 1) {
    throw ConfigError(strf("filter: min_patch_pixels must be positive (got %d)", min_patch_pixels));
  }
}

FilterConfig filter_config_from_json(const json& j) {
  StrictWalker<ConfigError> o(j, "config: ", "filter");
  FilterConfig cfg;
  o.read_double("iou_min", cfg.iou_min);
  o.read_double("mask_ratio_min", cfg.mask_ratio_min);
  o.read_double("conf2d_min", cfg.conf2d_min);
  o.read_double("conf3d_min", cfg.conf3d_min);
  o.read_double("confseg_min", cfg.confseg_min);
  o.read_int("min_patch_pixels", cfg.min_patch_pixels);
  o.read_double("review_band", cfg.review_band);
  o.finish();
  cfg.validate();
  return cfg;
}

json filter_config_to_json(const FilterConfig& cfg) {
  return json{{"iou_min", cfg.iou_min},
              {"mask_ratio_min", cfg.mask_ratio_min},
              {"conf2d_min", cfg.conf2d_min},
              {"conf3d_min", cfg.conf3d_min},
              {"confseg_min", cfg.confseg_min},
              {"min_patch_pixels", cfg.min_patch_pixels},
              {"review_band", cfg.review_band}};
}

std::string to_string(FilterReason reason) {
  switch (reason) {
    case FilterReason::kKeep: return "keep";
    case FilterReason::kPatchTooSmall: return "patch_too_small";
    case FilterReason::kIou: return "iou";
    case FilterReason::kMaskRatio: return "mask_ratio";
    case FilterReason::kConf2d: return "conf2d";
    case FilterReason::kConf3d: return "conf3d";
    case FilterReason::kConfSeg: return "confseg";
  }
  throw InvalidArgument("unhandled filter reason");
}

bool FilterDecision::borderline(double band) const {
  if (keep()) return false;
  const double gap = threshold - value;
  if (reason == FilterReason::kPatchTooSmall) return gap <= band * threshold;
  return gap <= band;
}

FilterDecision filter_record(const PatchRecord& rec, const Image& mask, const FilterConfig& cfg) {
  const double patch_pixels = static_cast<double>(mask.width) * mask.height;
  if (patch_pixels < cfg.min_patch_pixels) {
    return {FilterReason::kPatchTooSmall, patch_pixels, static_cast<double>(cfg.min_patch_pixels)};
  }
  const double iou = iou_2d(rec.box2d, project_box3d(rec.box3d, rec.k));
  if (iou < cfg.iou_min) return {FilterReason::kIou, iou, cfg.iou_min};
  std::int64_t inside = 0;
  for (int y = 0; y < mask.height; ++y) {
    const double py = rec.crop_y + y + 0.5;
    if (py < rec.box2d.y_min || py > rec.box2d.y_max) continue;
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y, 0) < 0.5f) continue;
      const double px = rec.crop_x + x + 0.5;
      if (px >= rec.box2d.x_min && px <= rec.box2d.x_max) ++inside;
    }
  }
  const double ratio = static_cast<double>(inside) / rec.box2d.area();
  if (ratio < cfg.mask_ratio_min) return {FilterReason::kMaskRatio, ratio, cfg.mask_ratio_min};
  if (rec.conf2d < cfg.conf2d_min) return {FilterReason::kConf2d, rec.conf2d, cfg.conf2d_min};
  if (rec.conf3d < cfg.conf3d_min) return {FilterReason::kConf3d, rec.conf3d, cfg.conf3d_min};
  if (rec.confseg < cfg.confseg_min) {
    return {FilterReason::kConfSeg, rec.confseg, cfg.confseg_min};
  }
  return {};
}

FilterReport filter_records(const std::vector<PatchRecord>& records, const std::string& base_dir,
                            const FilterConfig& cfg) {
  cfg.validate();
  FilterReport rep;
  rep.decisions.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    Image mask;
    try {
      mask = read_mask_png((fs::path(base_dir) / records[i].mask_path).string());
    } catch (const Error& e) {
      throw DataError("record \"" + records[i].id + "\": " + e.what());
    }
    const FilterDecision d = filter_record(records[i], mask, cfg);
    rep.decisions.push_back(d);
    if (d.keep()) {
      rep.kept.push_back(i);
    } else {
      ++rep.reason_counts[to_string(d.reason)];
      if (d.borderline(cfg.review_band)) rep.borderline.push_back(i);
    }
  }
  return rep;
}

// ---- review queue -------------------------------------------------------

namespace {

// Patch with the reprojected 3D box wireframe (green) and the detector's
// 2D box (amber), both in patch pixel coordinates.
Image review_overlay(const std::string& base_dir, const PatchRecord& rec) {
  Image img;
  try {
    img = to_rgb(read_png((fs::path(base_dir) / rec.patch_path).string()));
  } catch (const Error& e) {
    throw DataError("record \"" + rec.id + "\": " + e.what());
  }
  Intrinsics k = rec.k;
  k.principal_x -= rec.crop_x;
  k.principal_y -= rec.crop_y;
  const std::array<Vec3, 8> corners = box3d_corners(rec.box3d);
  std::array<Vec2, 8> uv;
  for (int i = 0; i < 8; ++i) {
    uv[i] = Vec2(k.principal_x + k.focal_x * corners[i].x() / corners[i].z(),
                 k.principal_y + k.focal_y * corners[i].y() / corners[i].z());
  }
  // Corner index bits are (x sign, y sign, z sign); edges join single-bit
  // neighbours.
  static const int kEdges[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {0, 2}, {1, 3},
                                    {4, 6}, {5, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  const float green[3] = {0.1f, 0.95f, 0.2f};
  for (const auto& e : kEdges) {
    draw_line(img, uv[e[0]].x(), uv[e[0]].y(), uv[e[1]].x(), uv[e[1]].y(), green);
  }
  const float amber[3] = {1.0f, 0.8f, 0.1f};
  const double x0 = rec.box2d.x_min - rec.crop_x, x1 = rec.box2d.x_max - rec.crop_x;
  const double y0 = rec.box2d.y_min - rec.crop_y, y1 = rec.box2d.y_max - rec.crop_y;
  draw_line(img, x0, y0, x1, y0, amber);
  draw_line(img, x1, y0, x1, y1, amber);
  draw_line(img, x1, y1, x0, y1, amber);
  draw_line(img, x0, y1, x0, y0, amber);
  return img;
}

Image contact_sheet(const std::vector<Image>& thumbs, int cell) {
  const int n = static_cast<int>(thumbs.size());
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  Image sheet = Image::zeros(cols * cell, rows * cell, 3);
  for (int i = 0; i < n; ++i) {
    const int ox = (i % cols) * cell, oy = (i / cols) * cell;
    for (int y = 0; y < cell; ++y) {
      for (int x = 0; x < cell; ++x) {
        for (int c = 0; c < 3; ++c) sheet.at(ox + x, oy + y, c) = thumbs[i].at(x, y, c);
      }
    }
  }
  return sheet;
}

}  // namespace

void export_review_queue(const std::vector<PatchRecord>& records, const FilterReport& report,
                         const std::string& base_dir, const std::string& out_dir) {
  if (report.decisions.size() != records.size()) {
    throw InvalidArgument("review export: report does not match the record list");
  }
  fs::create_directories(out_dir);
  const std::string queue_path = (fs::path(out_dir) / "queue.jsonl").string();
  std::ofstream out(queue_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write review queue " + queue_path);
  std::vector<Image> thumbs;
  for (size_t idx : report.borderline) {
    const PatchRecord& rec = records[idx];
    const FilterDecision& d = report.decisions[idx];
    const Image overlay = review_overlay(base_dir, rec);
    const std::string overlay_name = rec.id + ".png";
    write_png((fs::path(out_dir) / overlay_name).string(), overlay);
    json line;
    line["record"] = record_to_json(rec);
    line["reason"] = to_string(d.reason);
    line["value"] = d.value;
    line["threshold"] = d.threshold;
    line["overlay"] = overlay_name;
    out << line.dump() << '\n';
    thumbs.push_back(letterbox(overlay, 96).image);
  }
  out.flush();
  if (!out) throw DataError("failed writing review queue " + queue_path);
  if (!thumbs.empty()) {
    write_png((fs::path(out_dir) / "contact_sheet.png").string(), contact_sheet(thumbs, 96));
  }
}

std::vector<std::string> borderline_ids(const std::vector<PatchRecord>& records,
                                        const FilterReport& report) {
  std::vector<std::string> out;
  out.reserve(report.borderline.size());
  for (size_t idx : report.borderline) out.push_back(records[idx].id);
  return out;
}

std::vector<std::string> load_decisions(const std::string& path,
                                        const std::vector<std::string>& borderline_ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open decisions file " + path);
  const std::set<std::string> known(borderline_ids.begin(), borderline_ids.end());
  std::set<std::string> seen;
  std::vector<std::string> accepted;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::string id, verb, extra;
    ss >> id >> verb;
    if (verb.empty() || (ss >> extra)) {
      throw DataError(strf("%s:%d: expected \"<id> accept|reject\"", path.c_str(), lineno));
    }
    if (verb != "accept" && verb != "reject") {
      throw DataError(strf("%s:%d: unknown decision \"%s\" (expected accept or reject)",
                           path.c_str(), lineno, verb.c_str()));
    }
    if (!known.count(id)) {
      throw DataError(strf("%s:%d: id \"%s\" is not in the review queue", path.c_str(), lineno,
                           id.c_str()));
    }
    if (!seen.insert(id).second) {
      throw DataError(strf("%s:%d: duplicate decision for \"%s\"", path.c_str(), lineno,
                           id.c_str()));
    }
    if (verb == "accept") accepted.push_back(id);
  }
  return accepted;
}

std::vector<PatchRecord> merge_decisions(const std::vector<PatchRecord>& records,
                                         const FilterReport& report,
                                         const std::vector<std::string>& accepted_ids) {
  if (report.decisions.size() != records.size()) {
    throw InvalidArgument("merge: report does not match the record list");
  }
  const std::set<std::string> accepted(accepted_ids.begin(), accepted_ids.end());
  const std::set<size_t> kept(report.kept.begin(), report.kept.end());
  const std::set<size_t> border(report.borderline.begin(), report.borderline.end());
  std::vector<PatchRecord> out;
  for (size_t i = 0; i < records.size(); ++i) {
    if (kept.count(i) || (border.count(i) && accepted.count(records[i].id))) {
      out.push_back(records[i]);
    }
  }
  return out;
}

// ---- detector-output ingestion -------------------------------------------

std::vector<PatchRecord> ingest_detector_file(const std::string& json_path,
                                              const std::string& images_dir,
                                              const std::string& out_dir) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw DataError("cannot open detector file " + json_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(strf("%s: parse error at byte %zu: %s", json_path.c_str(),
                         static_cast<size_t>(e.byte), e.what()));
  }
  const std::string where = json_path + ": ";
  StrictWalker<DataError> o(j, where, "");
  const std::string image_name = o.req_string("image");
  const Intrinsics k = read_intrinsics(o.req_child("intrinsics"), where, "intrinsics");
  const std::string source_str = o.req_string("source");
  const json& dets = o.req_child("detections");
  o.finish();
  SourceTag source;
  try {
    source = parse_source_tag(source_str);
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  if (!dets.is_array()) throw DataError(where + "detections must be an array");

  Image image;
  try {
    image = to_rgb(read_png((fs::path(images_dir) / image_name).string()));
  } catch (const Error& e) {
    throw DataError(where + e.what());
  }
  std::string stem = fs::path(image_name).stem().string();
  for (char& c : stem) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) c = '_';
  }
  if (stem.empty() || stem == "." || stem == "..") stem = "image";

  fs::create_directories(fs::path(out_dir) / "patches");
  fs::create_directories(fs::path(out_dir) / "masks");
  const fs::path det_dir = fs::path(json_path).parent_path();

  std::vector<PatchRecord> out;
  for (size_t di = 0; di < dets.size(); ++di) {
    const std::string dwhere = strf("%s: detection %zu: ", json_path.c_str(), di);
    StrictWalker<DataError> dw(dets[di], dwhere, "");
    std::vector<double> b2 = dw.req_double_list("box2d", 4);
    const Box3D box3d = read_box3d(dw.req_child("box3d"), dwhere, "box3d");
    double s2d = 0, s3d = 0, sseg = 0;
    {
      StrictWalker<DataError> sw(dw.req_child("scores"), dwhere, "scores");
      s2d = sw.req_double("det2d");
      s3d = sw.req_double("det3d");
      sseg = sw.req_double("seg");
      sw.finish();
    }
    const std::string mask_path = dw.req_string("mask_path");
    std::string instance;
    dw.read_string("instance", instance);
    dw.finish();

    Image fmask;
    try {
      fmask = read_mask_png((det_dir / mask_path).string());
    } catch (const Error& e) {
      throw DataError(dwhere + e.what());
    }
    if (fmask.width != image.width || fmask.height != image.height) {
      throw DataError(dwhere + strf("mask resolution %d x %d does not match image %d x %d",
                                    fmask.width, fmask.height, image.width, image.height));
    }
    const CropRect crop =
        integer_crop(Box2D{b2[0], b2[1], b2[2], b2[3]}, image.width, image.height, dwhere);

    PatchRecord rec;
    rec.id = strf("%s_d%02zu", stem.c_str(), di);
    rec.patch_path = "patches/" + rec.id + ".png";
    rec.mask_path = "masks/" + rec.id + ".png";
    rec.image_width = image.width;
    rec.image_height = image.height;
    rec.crop_x = crop.x0;
    rec.crop_y = crop.y0;
    rec.k = k;
    rec.box2d = crop.clamped;
    rec.box3d = box3d;
    rec.instance = instance;
    rec.source = source;
    rec.conf2d = s2d;
    rec.conf3d = s3d;
    rec.confseg = sseg;
    try {
      rec.validate();
    } catch (const Error& e) {
      throw DataError(dwhere + e.what());
    }
    write_png((fs::path(out_dir) / rec.patch_path).string(),
              crop_image(image, crop.x0, crop.y0, crop.x1, crop.y1));
    write_png((fs::path(out_dir) / rec.mask_path).string(),
              crop_image(fmask, crop.x0, crop.y0, crop.x1, crop.y1));
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- synthetic dataset ----------------------------------------------------

void SynthDatasetConfig::validate() const {
  if (instances < 1) throw ConfigError("synth: instances must be positive");
  if (views < 1) throw ConfigError("synth: views must be positive");
  if (image_width < 32 || image_height < 32) {
    throw ConfigError("synth: image_width and image_height must be at least 32");
  }
  if (!(focal > 0.0)) throw ConfigError("synth: focal must be positive");
  if (!(distance >= 6.0)) {
    throw ConfigError(strf("synth: distance must be at least 6 meters (got %g)", distance));
  }
  if (gt_samples < 16) throw ConfigError("synth: gt_samples must be at least 16");
}

SynthDatasetConfig synth_config_from_json(const json& j) {
  StrictWalker<ConfigError> o(j, "config: ", "synth");
  SynthDatasetConfig cfg;
  o.read_int("instances", cfg.instances);
  o.read_int("views", cfg.views);
  o.read_int("image_width", cfg.image_width);
  o.read_int("image_height", cfg.image_height);
  o.read_double("focal", cfg.focal);
  o.read_double("distance", cfg.distance);
  o.read_int("gt_samples", cfg.gt_samples);
  o.read_u64("seed", cfg.seed);
  o.finish();
  cfg.validate();
  return cfg;
}

json synth_config_to_json(const SynthDatasetConfig& cfg) {
  return json{{"instances", cfg.instances},
              {"views", cfg.views},
              {"image_width", cfg.image_width},
              {"image_height", cfg.image_height},
              {"focal", cfg.focal},
              {"distance", cfg.distance},
              {"gt_samples", cfg.gt_samples},
              {"seed", cfg.seed}};
}

SynthDatasetConfig load_synth_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(strf("config: %s: parse error at byte %zu: %s", path.c_str(),
                           static_cast<size_t>(e.byte), e.what()));
  }
  return synth_config_from_json(j);
}

SynthInstance synth_instance(std::uint64_t seed, int index) {
  Rng rng({seed, stream::kSynth, 0x10, static_cast<std::uint64_t>(index)});
  SynthInstance si;
  const double hue = std::fmod(index * 137.508, 360.0);
  si.scene.body_color = hsv_to_rgb(hue, rng.uniform(0.5, 0.75), rng.uniform(0.5, 0.75));
  si.scene.window_color =
      Vec3(rng.uniform(0.10, 0.20), rng.uniform(0.16, 0.28), rng.uniform(0.28, 0.40));
  for (int a = 0; a < 3; ++a) si.scene.body_half[a] *= rng.uniform(0.9, 1.0);
  for (int a = 0; a < 3; ++a) si.scene.cabin_semi[a] *= rng.uniform(0.88, 1.0);
  si.dims.length = rng.uniform(3.9, 4.5);
  si.dims.height = rng.uniform(1.45, 1.7);
  si.dims.width = rng.uniform(1.75, 1.95);
  si.scene.validate();
  si.dims.validate();
  return si;
}

SyntheticScene synth_scene_hue(double hue_degrees) {
  SyntheticScene scene;
  scene.body_color = hsv_to_rgb(hue_degrees, 0.7, 0.7);
  scene.validate();
  return scene;
}

std::vector<PatchRecord> build_synth_dataset(const SynthDatasetConfig& cfg,
                                             const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(fs::path(out_dir) / "patches");
  fs::create_directories(fs::path(out_dir) / "masks");
  const double spacing = 2.0 * M_PI / cfg.views;
  const Intrinsics k{cfg.focal, cfg.focal, cfg.image_width / 2.0, cfg.image_height / 2.0};
  std::vector<PatchRecord> records;
  records.reserve(static_cast<size_t>(cfg.instances) * cfg.views);
  for (int i = 0; i < cfg.instances; ++i) {
    const SynthInstance si = synth_instance(cfg.seed, i);
    for (int v = 0; v < cfg.views; ++v) {
      Rng rng({cfg.seed, stream::kSynth, 0x20, static_cast<std::uint64_t>(i),
               static_cast<std::uint64_t>(v)});
      // Azimuth targets bin centers with jitter below half of the bin
      // width, so every bin of the ring stays covered.
      const double phi = (v + 0.5) * spacing + rng.uniform(-0.2, 0.2) * spacing;
      Box3D box;
      box.dims = si.dims;
      box.center = Vec3(0.0, rng.uniform(0.7, 0.95), cfg.distance * rng.uniform(0.9, 1.1));
      // Level camera: yaw chosen so the camera's canonical-frame azimuth
      // equals phi despite the anisotropic box normalization.
      box.yaw = std::atan2(std::cos(phi) / si.dims.width, std::sin(phi) / si.dims.length);

      const CropRect crop =
          integer_crop(project_box3d(box, k), cfg.image_width, cfg.image_height, "synth: ");
      Intrinsics pk = k;
      pk.principal_x -= crop.x0;
      pk.principal_y -= crop.y0;
      const GtRender gt = synth_render_gt(si.scene, canonical_from_camera(box), pk, crop.width(),
                                          crop.height(), cfg.gt_samples);

      // Composite over a plain horizontal-ramp backdrop; the patch should
      // look like a crop of a real frame, not a cutout on black.
      Vec3 bg(rng.uniform(0.30, 0.55), rng.uniform(0.30, 0.55), rng.uniform(0.30, 0.55));
      const double ramp = rng.uniform(-0.1, 0.1);
      Image patch = Image::zeros(crop.width(), crop.height(), 3);
      for (int y = 0; y < patch.height; ++y) {
        for (int x = 0; x < patch.width; ++x) {
          const double shade = patch.width > 1 ? ramp * (x / (patch.width - 1.0) - 0.5) : 0.0;
          const float a = gt.acc.at(x, y, 0);
          for (int c = 0; c < 3; ++c) {
            const double b = std::clamp(bg[c] + shade, 0.0, 1.0);
            patch.at(x, y, c) = gt.rgb.at(x, y, c) + (1.0f - a) * static_cast<float>(b);
          }
        }
      }

      PatchRecord rec;
      rec.id = strf("car%02d_v%02d", i, v);
      rec.patch_path = "patches/" + rec.id + ".png";
      rec.mask_path = "masks/" + rec.id + ".png";
      rec.image_width = cfg.image_width;
      rec.image_height = cfg.image_height;
      rec.crop_x = crop.x0;
      rec.crop_y = crop.y0;
      rec.k = k;
      rec.box2d = crop.clamped;
      rec.box3d = box;
      rec.instance = strf("car%02d", i);
      rec.source = SourceTag::kSynth;
      rec.validate();
      write_png((fs::path(out_dir) / rec.patch_path).string(), patch);
      write_png((fs::path(out_dir) / rec.mask_path).string(), gt.mask);
      records.push_back(std::move(rec));
    }
  }
  write_dataset(records, (fs::path(out_dir) / "manifest.jsonl").string());
  return records;
}

}  // namespace carfield
