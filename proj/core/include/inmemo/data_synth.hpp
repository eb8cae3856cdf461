#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "inmemo/image.hpp"

namespace inmemo {

enum class TaskKind { segmentation, detection };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// Procedurally drawn shape classes. The enumerator value is the class id.
enum class ShapeClass : int {
  circle = 0,
  square,
  triangle,
  star,
  cross,
  ring,
  crescent,
  ellipse,
  diamond,
  bar,
};

inline constexpr int kShapeClassCount = 10;

std::string shape_class_name(int class_id);

/// Geometry of one generated shape. Every class fits inside the disc of
/// radius `size` around the centre; `aspect` only affects ellipses.
struct Shape {
  int class_id = 0;
  double cx = 0, cy = 0;
  double size = 0;
  double angle = 0;
  double aspect = 1;
};

/// Point-membership test in image coordinates (pixel (r, c) has its centre at
/// x = c + 0.5, y = r + 0.5).
bool shape_contains(const Shape& s, double x, double y);

struct TaskPair {
  std::uint32_t id = 0;
  Image input;
  Image label;
  int class_id = 0;
  int domain_id = 0;

  bool operator==(const TaskPair&) const = default;
};

struct Dataset {
  std::vector<TaskPair> pairs;
  TaskKind task_kind = TaskKind::segmentation;
  std::map<int, std::string> class_roster;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  /// Distinct class ids present, ascending.
  std::vector<int> class_ids() const;
  const TaskPair& by_id(std::uint32_t id) const;
  /// Same roster and task kind, selected pairs only.
  Dataset subset(const std::vector<std::size_t>& positions) const;
  Dataset filter_classes(const std::vector<int>& classes) const;

  bool operator==(const Dataset&) const = default;
};

struct DatasetSpec {
  std::vector<int> classes;
  int per_class_count = 16;
  int image_size = 64;
  /// 0: flat random-colour backgrounds; 1: high-frequency noise textures.
  int domain_id = 0;
  std::uint64_t seed = 0;
  TaskKind task_kind = TaskKind::segmentation;
  /// Added to every generated pair id, so datasets can be merged or used as
  /// disjoint pools without id collisions.
  std::uint32_t id_offset = 0;
};

/// Shape drawn for the i-th pair of a class. Depends only on (seed, class, i,
/// image_size), never on the domain, so domains share foreground statistics.
Shape sample_shape(const DatasetSpec& spec, int class_id, int index);

/// Label foreground for a shape: exact pixel-centre rasterization.
std::vector<std::uint8_t> rasterize_shape(const Shape& s, int image_size);

/// Filled axis-aligned bounding box of a foreground plane.
std::vector<std::uint8_t> bounding_box_fill(const std::vector<std::uint8_t>& fg, int image_size);

Dataset generate_dataset(const DatasetSpec& spec);

struct Fold {
  int index = 0;
  std::vector<int> test_classes;
  Dataset train;
  Dataset test;
};

/// Held-out class folds: fold i tests the i-th contiguous group of classes and
/// trains on the remaining classes.
std::vector<Fold> split_folds(const Dataset& d, int fold_count);

/// Keeps pairs whose label foreground fraction is strictly below max_fraction.
Dataset apply_area_filter(const Dataset& d, double max_fraction);

double foreground_fraction(const Image& label);

/// Directory with manifest.json plus <id>_input.png / <id>_label.png.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace inmemo
