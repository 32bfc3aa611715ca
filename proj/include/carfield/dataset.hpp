#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "carfield/geometry.hpp"
#include "carfield/image.hpp"
#include "carfield/sample.hpp"
#include "carfield/synthetic.hpp"

namespace carfield {

enum class SourceTag { kKittiMot, kKittiDet, kDvm, kSynth };

std::string to_string(SourceTag tag);
// Throws DataError on an unknown tag string.
SourceTag parse_source_tag(const std::string& s);

// One car patch with everything needed to supervise the field. patch/mask
// are relative PNG paths rooted at the manifest's directory; intrinsics are
// for the full source image and (crop_x, crop_y) is the patch's integer
// pixel origin in it. box2d lives in full-image pixel coordinates, box3d in
// the camera frame.
struct PatchRecord {
  std::string id;
  std::string patch_path;
  std::string mask_path;
  int image_width = 0;
  int image_height = 0;
  int crop_x = 0;
  int crop_y = 0;
  Intrinsics k;
  Box2D box2d;
  Box3D box3d;
  std::string instance;  // empty = unlabeled (single-view only)
  SourceTag source = SourceTag::kSynth;
  double conf2d = 1.0;
  double conf3d = 1.0;
  double confseg = 1.0;

  // File-free invariants; throws DataError.
  void validate() const;
};

nlohmann::json record_to_json(const PatchRecord& rec);
// `where` prefixes every error message, e.g. "manifest.jsonl:3: ".
PatchRecord record_from_json(const nlohmann::json& j, const std::string& where);

// Line-delimited JSON manifest, one record per line, sorted keys. Loading
// verifies ids are unique and that the referenced patch/mask files exist
// next to the manifest; errors name the line and record.
std::vector<PatchRecord> load_dataset(const std::string& manifest_path);
void write_dataset(const std::vector<PatchRecord>& records, const std::string& manifest_path);

// A record plus its decoded images; patch RGB in [0,1], mask {0,1}.
struct LoadedRecord {
  PatchRecord rec;
  Image patch;
  Image mask;
};

// Reads and cross-checks the PNGs behind a record (resolutions match, crop
// stays inside the source image). base_dir is the manifest's directory.
LoadedRecord load_record_images(const std::string& base_dir, const PatchRecord& rec);

// Crop-adjusted intrinsics plus the camera->canonical chain; unlabeled
// records become their own single-record instance.
TrainingSample to_training_sample(const LoadedRecord& lr, int view_id);

// load_dataset + per-record image load + conversion, view ids in manifest
// order.
std::vector<TrainingSample> load_training_set(const std::string& manifest_path);

// Azimuth of the record's camera about the canonical vertical axis, in
// (-pi, pi].
double record_azimuth(const PatchRecord& rec);

// ---- filter pipeline --------------------------------------------------

struct FilterConfig {
  double iou_min = 0.5;
  double mask_ratio_min = 0.5;
  double conf2d_min = 0.7;
  double conf3d_min = 0.7;
  double confseg_min = 0.7;
  int min_patch_pixels = 1024;  // patch area in pixels (32 x 32)
  double review_band = 0.05;    // borderline export half-width

  // Throws ConfigError.
  void validate() const;
};

FilterConfig filter_config_from_json(const nlohmann::json& j);
nlohmann::json filter_config_to_json(const FilterConfig& cfg);

enum class FilterReason {
  kKeep = 0,
  kPatchTooSmall,
  kIou,
  kMaskRatio,
  kConf2d,
  kConf3d,
  kConfSeg,
};

std::string to_string(FilterReason reason);

// Checks run in a fixed order and the first failure wins; value/threshold
// expose the failing metric so the review queue can band on it.
struct FilterDecision {
  FilterReason reason = FilterReason::kKeep;
  double value = 0.0;
  double threshold = 0.0;

  bool keep() const { return reason == FilterReason::kKeep; }
  // Rejected, but within the review band of the threshold. The band is
  // absolute for unit-scale metrics and relative for the pixel count.
  bool borderline(double band) const;
};

// Pure per-record check; `mask` is the record's decoded {0,1} mask.
FilterDecision filter_record(const PatchRecord& rec, const Image& mask, const FilterConfig& cfg);

struct FilterReport {
  std::vector<FilterDecision> decisions;   // one per input record
  std::vector<size_t> kept;                // indices into the input
  std::vector<size_t> borderline;          // rejected within the band
  std::map<std::string, int> reason_counts;  // rejections only
};

// Loads each record's mask from base_dir and filters. Order-independent
// per record and deterministic.
FilterReport filter_records(const std::vector<PatchRecord>& records, const std::string& base_dir,
                            const FilterConfig& cfg);

// ---- review queue -------------------------------------------------------

// Writes out_dir/queue.jsonl (one borderline record per line with its
// failing metric), a wireframe overlay PNG per record, and a contact sheet.
// An empty borderline set writes just the empty manifest.
void export_review_queue(const std::vector<PatchRecord>& records, const FilterReport& report,
                         const std::string& base_dir, const std::string& out_dir);

// Decisions file: one "<id> accept" or "<id> reject" per line; blank lines
// and full-line # comments allowed. Every id must be in `borderline_ids`
// and appear at most once; malformed lines are DataErrors naming the line.
// Returns the accepted ids.
std::vector<std::string> load_decisions(const std::string& path,
                                        const std::vector<std::string>& borderline_ids);

// Ids of report.borderline records, in record order.
std::vector<std::string> borderline_ids(const std::vector<PatchRecord>& records,
                                        const FilterReport& report);

// Kept records plus accepted borderline ones, in input order.
std::vector<PatchRecord> merge_decisions(const std::vector<PatchRecord>& records,
                                         const FilterReport& report,
                                         const std::vector<std::string>& accepted_ids);

// ---- detector-output ingestion -------------------------------------------

// Parses one per-image detector JSON (documented schema: image, intrinsics,
// detections with box2d/box3d/scores/mask_path), crops each detection's
// patch and full-image mask at the integer hull of box2d, writes PNGs under
// out_dir/patches and out_dir/masks, and returns the records. JSON syntax
// errors name the file and byte offset.
std::vector<PatchRecord> ingest_detector_file(const std::string& json_path,
                                              const std::string& images_dir,
                                              const std::string& out_dir);

// ---- synthetic dataset ----------------------------------------------------

struct SynthDatasetConfig {
  int instances = 4;
  int views = 6;
  int image_width = 320;
  int image_height = 240;
  double focal = 280.0;
  double distance = 10.0;  // mean camera-to-car range, meters
  int gt_samples = 512;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

SynthDatasetConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthDatasetConfig& cfg);
SynthDatasetConfig load_synth_config(const std::string& path);

// Deterministic per-instance scene and car dimensions (seeded color and
// mild size jitter).
struct SynthInstance {
  SyntheticScene scene;
  CarDimensions dims;
};
SynthInstance synth_instance(std::uint64_t seed, int index);

// Default-geometry scene with the body color on an HSV hue ring.
SyntheticScene synth_scene_hue(double hue_degrees);

// Renders a level-camera synthetic dataset (patch/mask PNGs plus
// manifest.jsonl under out_dir) whose per-instance view azimuths cover the
// ring, and returns the records.
std::vector<PatchRecord> build_synth_dataset(const SynthDatasetConfig& cfg,
                                             const std::string& out_dir);

}  // namespace carfield
