#include "gfn/data.h"

#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "gfn/errors.h"
#include "json.hpp"

namespace gfn {

using nlohmann::json;

const char* to_string(IssueKind kind) {
  switch (kind) {
    case IssueKind::kDuplicateBox:
      return "duplicate_box";
    case IssueKind::kRepeatedPersonId:
      return "repeated_person_id";
    case IssueKind::kRepeatedGalleryScene:
      return "repeated_gallery_scene";
  }
  return "unknown";
}

std::size_t ValidationReport::count(IssueKind kind) const {
  std::size_t n = 0;
  for (const auto& issue : issues) n += issue.kind == kind;
  return n;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << "duplicate_box=" << count(IssueKind::kDuplicateBox)
     << " repeated_person_id=" << count(IssueKind::kRepeatedPersonId)
     << " repeated_gallery_scene=" << count(IssueKind::kRepeatedGalleryScene);
  return os.str();
}

namespace {

std::string ann_label(const PersonAnnotation& a) {
  return "annotation " + std::to_string(a.ann_id) + " (image " +
         std::to_string(a.scene_id) + ")";
}

}  // namespace

DatasetBundle::DatasetBundle(std::vector<SceneRecord> scenes,
                             std::vector<PersonAnnotation> annotations,
                             std::string partition_name)
    : scenes_(std::move(scenes)),
      annotations_(std::move(annotations)),
      partition_name_(std::move(partition_name)) {
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    const auto& s = scenes_[i];
    if (s.width <= 0 || s.height <= 0) {
      throw LoadError("image " + std::to_string(s.scene_id) +
                      ": width and height must be positive");
    }
    if (!scene_index_.emplace(s.scene_id, i).second) {
      throw LoadError("image " + std::to_string(s.scene_id) + ": duplicate id");
    }
    scene_anns_[s.scene_id];
    scene_identities_[s.scene_id];
  }

  for (std::size_t i = 0; i < annotations_.size(); ++i) {
    const auto& a = annotations_[i];
    if (!ann_index_.emplace(a.ann_id, i).second) {
      throw LoadError("annotation " + std::to_string(a.ann_id) + ": duplicate id");
    }
    auto it = scene_index_.find(a.scene_id);
    if (it == scene_index_.end()) {
      throw LoadError(ann_label(a) + ": image_id does not resolve");
    }
    const Box& b = a.bbox;
    if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) ||
        !std::isfinite(b.h)) {
      throw LoadError(ann_label(a) + ": non-finite bbox");
    }
    if (b.w <= 0.0 || b.h <= 0.0) {
      throw LoadError(ann_label(a) + ": bbox width and height must be positive");
    }
    const SceneRecord& s = scenes_[it->second];
    if (b.x < 0.0 || b.y < 0.0 || b.x2() > s.width || b.y2() > s.height) {
      throw LoadError(ann_label(a) + ": bbox exceeds image extent");
    }
    if (a.is_known != a.person_id.has_value()) {
      throw LoadError(ann_label(a) +
                      ": is_known must be true exactly when person_id is set");
    }
    scene_anns_[a.scene_id].push_back(a.ann_id);
  }

  // Defect scan, per scene in ascending id order.
  for (const auto& [sid, anns] : scene_anns_) {
    std::map<std::tuple<double, double, double, double>, std::vector<AnnId>> boxes;
    std::map<PersonId, std::vector<AnnId>> ids;
    for (AnnId aid : anns) {
      const auto& a = annotations_[ann_index_.at(aid)];
      boxes[{a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h}].push_back(aid);
      if (a.person_id) {
        ids[*a.person_id].push_back(aid);
        scene_identities_[sid].insert(*a.person_id);
      }
    }
    for (const auto& [key, group] : boxes) {
      if (group.size() > 1) {
        report_.issues.push_back(
            {IssueKind::kDuplicateBox, sid, {group.begin(), group.end()},
             "image " + std::to_string(sid) + ": " + std::to_string(group.size()) +
                 " annotations share one bbox"});
      }
    }
    for (const auto& [pid, group] : ids) {
      if (group.size() > 1) {
        report_.issues.push_back(
            {IssueKind::kRepeatedPersonId, sid, {group.begin(), group.end()},
             "image " + std::to_string(sid) + ": person_id " +
                 std::to_string(pid) + " appears " + std::to_string(group.size()) +
                 " times"});
      }
    }
    for (PersonId pid : scene_identities_[sid]) identity_scenes_[pid].push_back(sid);
  }
}

const SceneRecord& DatasetBundle::scene(SceneId id) const {
  auto it = scene_index_.find(id);
  if (it == scene_index_.end()) {
    throw LookupError("unknown scene id " + std::to_string(id));
  }
  return scenes_[it->second];
}

const PersonAnnotation& DatasetBundle::annotation(AnnId id) const {
  auto it = ann_index_.find(id);
  if (it == ann_index_.end()) {
    throw LookupError("unknown annotation id " + std::to_string(id));
  }
  return annotations_[it->second];
}

const std::vector<AnnId>& DatasetBundle::annotations_in(SceneId id) const {
  auto it = scene_anns_.find(id);
  if (it == scene_anns_.end()) {
    throw LookupError("unknown scene id " + std::to_string(id));
  }
  return it->second;
}

const std::set<PersonId>& DatasetBundle::identities_in(SceneId id) const {
  auto it = scene_identities_.find(id);
  if (it == scene_identities_.end()) {
    throw LookupError("unknown scene id " + std::to_string(id));
  }
  return it->second;
}

const std::vector<SceneId>& DatasetBundle::scenes_with(PersonId pid) const {
  static const std::vector<SceneId> kNone;
  auto it = identity_scenes_.find(pid);
  return it == identity_scenes_.end() ? kNone : it->second;
}

std::vector<SceneId> DatasetBundle::scene_ids() const {
  std::vector<SceneId> out;
  out.reserve(scene_index_.size());
  for (const auto& [id, idx] : scene_index_) out.push_back(id);
  return out;
}

std::vector<PersonId> DatasetBundle::identities() const {
  std::vector<PersonId> out;
  out.reserve(identity_scenes_.size());
  for (const auto& [pid, s] : identity_scenes_) out.push_back(pid);
  return out;
}

DatasetBundle DatasetBundle::subset(const std::set<SceneId>& keep,
                                    std::string partition_name) const {
  std::vector<SceneRecord> scenes;
  std::vector<PersonAnnotation> anns;
  for (const auto& s : scenes_) {
    if (keep.count(s.scene_id)) scenes.push_back(s);
  }
  for (const auto& a : annotations_) {
    if (keep.count(a.scene_id)) anns.push_back(a);
  }
  return DatasetBundle(std::move(scenes), std::move(anns), std::move(partition_name));
}

namespace {

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw LoadError(where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw LoadError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

DatasetBundle parse_dataset(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("malformed dataset JSON: ") + e.what());
  }
  if (!doc.is_object()) throw LoadError("dataset JSON must be an object");
  if (!doc.contains("images") || !doc["images"].is_array()) {
    throw LoadError("dataset JSON: missing 'images' array");
  }
  if (!doc.contains("annotations") || !doc["annotations"].is_array()) {
    throw LoadError("dataset JSON: missing 'annotations' array");
  }
  if (doc.contains("categories")) {
    const auto& cats = doc["categories"];
    if (!cats.is_array() || cats.size() != 1 || !cats[0].is_object() ||
        cats[0].value("name", "") != "person") {
      throw LoadError("dataset JSON: categories must be a single 'person' entry");
    }
  }

  std::vector<SceneRecord> scenes;
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    const json& im = doc["images"][i];
    const std::string where = "images[" + std::to_string(i) + "]";
    if (!im.is_object()) throw LoadError(where + ": not an object");
    SceneRecord s;
    s.scene_id = required<SceneId>(im, "id", where);
    s.file_name = required<std::string>(im, "file_name", where);
    s.width = required<int>(im, "width", where);
    s.height = required<int>(im, "height", where);
    s.cam_id = required<int>(im, "cam_id", where);
    scenes.push_back(std::move(s));
  }

  std::vector<PersonAnnotation> anns;
  for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
    const json& an = doc["annotations"][i];
    const std::string where = "annotations[" + std::to_string(i) + "]";
    if (!an.is_object()) throw LoadError(where + ": not an object");
    PersonAnnotation a;
    a.ann_id = required<AnnId>(an, "id", where);
    a.scene_id = required<SceneId>(an, "image_id", where);
    const auto bbox = required<std::vector<double>>(an, "bbox", where);
    if (bbox.size() != 4) throw LoadError(where + ": bbox must have 4 numbers");
    a.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
    auto pid = an.find("person_id");
    if (pid != an.end() && !pid->is_null()) {
      if (!pid->is_number_integer()) {
        throw LoadError(where + ": person_id must be an integer or null");
      }
      a.person_id = pid->get<PersonId>();
    }
    a.is_known = required<bool>(an, "is_known", where);
    anns.push_back(std::move(a));
  }

  return DatasetBundle(std::move(scenes), std::move(anns),
                       doc.value("partition", std::string()));
}

std::string serialize_dataset(const DatasetBundle& bundle) {
  json doc;
  doc["partition"] = bundle.partition_name();
  doc["categories"] = json::array({{{"id", 1}, {"name", "person"}}});
  json images = json::array();
  for (const auto& s : bundle.scenes()) {
    images.push_back({{"id", s.scene_id},
                      {"file_name", s.file_name},
                      {"width", s.width},
                      {"height", s.height},
                      {"cam_id", s.cam_id}});
  }
  json anns = json::array();
  for (const auto& a : bundle.annotations()) {
    json j = {{"id", a.ann_id},
              {"image_id", a.scene_id},
              {"category_id", 1},
              {"bbox", {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h}},
              {"is_known", a.is_known}};
    j["person_id"] = a.person_id ? json(*a.person_id) : json(nullptr);
    anns.push_back(std::move(j));
  }
  doc["images"] = std::move(images);
  doc["annotations"] = std::move(anns);
  return doc.dump(1) + "\n";
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

DatasetBundle load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_text_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path) {
  write_text_file(path, serialize_dataset(bundle));
}

}  // namespace gfn
