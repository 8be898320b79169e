#pragma once

// Procedural image+mask corpus for smoke training and tests: a smooth
// two-tone background and one textured blob whose outline is the mask.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "maskedit/training.hpp"

namespace maskedit {

Sample make_synthetic_sample(int resolution, std::uint64_t seed);
std::vector<Sample> make_synthetic_dataset(int count, int resolution, std::uint64_t seed);

// Writes image_XXX.png / mask_XXX.png and manifest.jsonl under dir.
DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace maskedit
