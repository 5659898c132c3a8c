#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace gfn {

using SceneId = std::int64_t;
using AnnId = std::int64_t;
using PersonId = std::int64_t;

// Axis-aligned box in COCO (x, y, w, h) pixel convention.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

struct SceneRecord {
  SceneId scene_id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  int cam_id = 0;

  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

struct PersonAnnotation {
  AnnId ann_id = 0;
  SceneId scene_id = 0;
  Box bbox;
  std::optional<PersonId> person_id;
  bool is_known = false;

  friend bool operator==(const PersonAnnotation&,
                         const PersonAnnotation&) = default;
};

// Known upstream annotation defects. They are reported, never repaired, so
// evaluation sees exactly what the reference protocol sees.
enum class IssueKind {
  kDuplicateBox,
  kRepeatedPersonId,
  kRepeatedGalleryScene,
};

const char* to_string(IssueKind kind);

struct ValidationIssue {
  IssueKind kind;
  SceneId scene_id = 0;
  std::vector<std::int64_t> refs;  // annotation ids, or query ann id for gallery repeats
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool empty() const { return issues.empty(); }
  std::size_t count(IssueKind kind) const;
  std::string summary() const;
};

// Scenes plus person annotations of one partition. Immutable once built; the
// constructor validates every structural invariant and throws LoadError on
// violation.
class DatasetBundle {
 public:
  DatasetBundle() = default;
  DatasetBundle(std::vector<SceneRecord> scenes,
                std::vector<PersonAnnotation> annotations,
                std::string partition_name = "");

  const std::vector<SceneRecord>& scenes() const { return scenes_; }
  const std::vector<PersonAnnotation>& annotations() const { return annotations_; }
  const std::string& partition_name() const { return partition_name_; }
  const ValidationReport& report() const { return report_; }

  bool has_scene(SceneId id) const { return scene_index_.count(id) != 0; }
  const SceneRecord& scene(SceneId id) const;
  bool has_annotation(AnnId id) const { return ann_index_.count(id) != 0; }
  const PersonAnnotation& annotation(AnnId id) const;

  // Annotation ids in a scene, in file order.
  const std::vector<AnnId>& annotations_in(SceneId id) const;
  // Distinct known identities present in a scene.
  const std::set<PersonId>& identities_in(SceneId id) const;
  // Distinct scenes containing a known identity, ascending. Empty if unseen.
  const std::vector<SceneId>& scenes_with(PersonId pid) const;

  // All scene ids, ascending.
  std::vector<SceneId> scene_ids() const;
  // All known identities, ascending.
  std::vector<PersonId> identities() const;

  // Restriction to a scene subset; annotations follow their scenes.
  DatasetBundle subset(const std::set<SceneId>& keep, std::string partition_name) const;

 private:
  std::vector<SceneRecord> scenes_;
  std::vector<PersonAnnotation> annotations_;
  std::string partition_name_;
  ValidationReport report_;

  std::map<SceneId, std::size_t> scene_index_;
  std::map<AnnId, std::size_t> ann_index_;
  std::map<SceneId, std::vector<AnnId>> scene_anns_;
  std::map<SceneId, std::set<PersonId>> scene_identities_;
  std::map<PersonId, std::vector<SceneId>> identity_scenes_;
};

// COCO-style JSON with person_id / is_known / cam_id extensions.
DatasetBundle parse_dataset(std::string_view json_text);
std::string serialize_dataset(const DatasetBundle& bundle);

DatasetBundle load_dataset(const std::filesystem::path& path);
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path);

// Reads a whole file; throws LoadError naming the path on failure.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace gfn
