// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mark/model.hpp"

namespace mark {

/// One tensor as stored in a checkpoint container.
struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Reads the raw contents of a MARKCKPT container without needing a model:
/// magic "MARKCKPT", little-endian u16 version (must be 1), u32 tensor
/// count, then per tensor a u16 name length, the UTF-8 name, a u8 rank, u32
/// dims, and the float32 payload.  Bad magic, an unsupported version,
/// duplicate names, truncation, and trailing bytes are format errors.
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

/// Writes arbitrary named tensors as a MARKCKPT v1 container (the inverse of
/// read_checkpoint).  Entry names must be unique.  Atomic like
/// save_checkpoint.  Used both for model checkpoints and for the KB
/// snapshot series recorded at task boundaries.
void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);

/// Writes every persistent array of the model (parameters and batchnorm
/// buffers, in collect_state order) into a MARKCKPT v1 container.  The file
/// appears atomically: bytes go to a temporary sibling that is renamed over
/// `path` only once the write succeeded.
void save_checkpoint(ModelState& model, const std::string& path);

/// Loads a container written by save_checkpoint into a model with the same
/// architecture and task layout (build it from the run's config first).
/// Every array must match by name and shape; a missing, unexpected, or
/// reshaped tensor is a format error naming it.  Values are restored bit for
/// bit, so save → load → save reproduces identical bytes.
void load_checkpoint(ModelState& model, const std::string& path);

} // namespace mark
