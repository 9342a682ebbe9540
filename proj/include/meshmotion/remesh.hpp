// Remeshing operators for the discretization-robustness protocol.
#pragma once

#include "meshmotion/mesh.hpp"

#include <vector>

namespace meshmotion {

enum class RemeshVariant { kOriginal, kDownsample2, kUpsample2, kVariableDensity };

const char* remesh_variant_name(RemeshVariant v);
RemeshVariant remesh_variant_from_name(const std::string& name);

// ORIGINAL -> identical copy.
// DS2      -> edge-collapse decimation to ~0.5 * N_S (within [0.45, 0.55]).
// US2      -> longest-edge midpoint splits to exactly 2 * N_S.
// VD       -> split by a plane through the centroid along the longest
//             bounding-box axis; one half upsampled, the other downsampled.
TriMesh remesh(const TriMesh& mesh, RemeshVariant variant, std::uint64_t seed);

// For each source vertex, the index of the nearest target vertex.
std::vector<int> nearest_correspondence(const TriMesh& source,
                                        const TriMesh& target);

}  // namespace meshmotion
