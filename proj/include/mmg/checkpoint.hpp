#pragma once

#include "mmg/model.hpp"
#include "mmg/optim.hpp"

#include <string>

namespace mmg {

// On-disk model snapshot: a directory holding manifest.json (model
// configuration plus the tensor table) and params.bin (one float64 blob
// with every value in declaration order, optimizer moments appended when
// present).  Parameters are stored at full working precision so a
// save/load cycle reproduces the model bit for bit.
inline constexpr char kCheckpointMagic[9] = "MMGCKPT1";

struct Checkpoint {
    ModelParams params;
    AdamState adam;
    bool has_adam = false;
};

void save_checkpoint(const ModelParams& params, const AdamState* adam,
                     const std::string& dir);

Checkpoint load_checkpoint(const std::string& dir);

} // namespace mmg
