// Procedural articulated bodies with registered ground-truth motions.
//
// The skeleton exists only inside this module: generated datasets expose
// nothing but meshes (the learned model is rig-free).
#pragma once

#include "meshmotion/mesh.hpp"

#include <map>
#include <string>
#include <vector>

namespace meshmotion {

struct IdentitySpec {
  // {upper arm, forearm, thigh, shin}. Radii stay above ~70% of the level-0
  // marching cell so thin limbs cannot alias into disconnected beads.
  std::array<double, 4> limb_lengths = {0.28, 0.26, 0.42, 0.40};
  std::array<double, 4> limb_radii = {0.065, 0.06, 0.075, 0.065};
  std::array<double, 3> torso = {0.34, 0.21, 0.56};  // width, depth, height
  int level = 0;  // 0/1/2 -> ~1k/4k/8k vertices
  std::uint64_t seed = 0;
};

enum class MotionKind { kArmRaise, kKneeRaise, kWalkCycle, kRunCycle };

const char* motion_kind_name(MotionKind k);
MotionKind motion_kind_from_name(const std::string& name);

struct MotionSpec {
  MotionKind kind = MotionKind::kWalkCycle;
  int frames = 30;                 // T, in [10, 400]
  double amplitude = 1.0;          // master scale; 0 freezes the rest pose
  double cycles = 1.5;             // gait cycles over the sequence
  double heading = 0.0;            // radians about +z (long-range motions)
  double stride = 0.35;            // root advance per cycle (long-range)
  double phase = 0.0;
  std::uint64_t seed = 0;
};

// Internal joint frames; never serialized into datasets.
struct Skeleton {
  struct Bone {
    std::string name;
    Vec3 head, tail;  // rest-pose segment
    double radius;
    int parent = -1;  // index into bones
  };
  std::vector<Bone> bones;
};

struct Body {
  TriMesh mesh;       // watertight, single component
  Skeleton skeleton;  // internal handles for ground-truth generation
  Matrix weights;     // N x bones skinning weights (rows sum to 1)
  IdentitySpec spec;
};

Body build_body(const IdentitySpec& spec);

// Smooth sinusoidal joint curves + dual-quaternion blending. Frame 0 is the
// rest pose.
MotionSequence animate(const Body& body, const MotionSpec& spec);

// Independently remesh every frame (random DS2/US2/VD per frame) so that no
// two frames share connectivity; geometry is preserved.
MotionSequence unregister(const MotionSequence& sequence, std::uint64_t seed);

struct SequenceRecord {
  std::string identity;
  std::string motion;
  std::string split;  // "train" | "test"
  std::string dir;    // relative to root
  int frames = 0;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int format_version = 1;
  std::string root;
  std::uint64_t seed = 0;
  int frames_per_sequence = 0;
  int level = 0;
  bool unregistered = false;
  std::vector<SequenceRecord> sequences;
  std::map<std::string, IdentitySpec> identities;

  std::vector<const SequenceRecord*> split(const std::string& name) const;
};

struct DatasetConfig {
  std::string root;
  int train_identities = 5;
  int test_identities = 2;
  std::vector<MotionKind> motions = {MotionKind::kArmRaise, MotionKind::kKneeRaise,
                                     MotionKind::kWalkCycle};
  int frames = 30;
  int level = 0;
  bool unregistered = false;
  std::uint64_t seed = 7;
};

DatasetManifest make_dataset(const DatasetConfig& config);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
std::uint64_t manifest_hash(const DatasetManifest& manifest);

// Throws unless train/test identities are disjoint and records are complete.
void validate_manifest(const DatasetManifest& manifest);

MotionSequence load_sequence(const DatasetManifest& manifest,
                             const SequenceRecord& record);

}  // namespace meshmotion
