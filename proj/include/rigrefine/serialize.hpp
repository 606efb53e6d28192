#pragma once

#include "rigrefine/checkpoint.hpp"
#include "rigrefine/corrections.hpp"
#include "rigrefine/scene_field.hpp"

namespace rigrefine {

// Correction checkpoints: "reference/<id>", "ext/<sensor>" (6 values),
// "traj/<scene>/meta" (t_min, t_max, frequency pairs, hidden width) and
// "traj/<scene>/params".
Checkpoint corrections_checkpoint(const CorrectionSet& corrections);
CorrectionSet corrections_from_checkpoint(const Checkpoint& ckpt);

// Field checkpoints: "field/meta" (bounds, level resolutions),
// "field/level<k>/density", "field/level<k>/color", "field/background" and
// "field/appearance/<camera>".
Checkpoint field_checkpoint(const VoxelField& field);
VoxelField field_from_checkpoint(const Checkpoint& ckpt);

}  // namespace rigrefine
