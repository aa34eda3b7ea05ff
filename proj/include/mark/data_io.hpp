// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mark/tensor.hpp"

namespace mark {

/// A flat labelled dataset as it comes off disk: one input tensor whose rows
/// are samples, plus a global class label per row.  `coarse_labels` is kept
/// only by readers whose format carries a second label track; everything
/// downstream works off `labels`.
struct RawDataset {
    Tensor inputs;                   // {N, ...} float32, pixels scaled to [0, 1]
    std::vector<int> labels;         // global class id per row
    std::vector<int> coarse_labels;  // optional second label track (may be empty)

    size_t size() const { return labels.size(); }
};

/// Reads an IDX image/label file pair (the MNIST container format: big-endian
/// magic + dimension header followed by raw unsigned bytes).  Pixels are
/// scaled to [0, 1] and the images come back as {N, 1, rows, cols}.
/// A wrong magic number is a format error that names the byte offset; a file
/// shorter than its own header claims is a length error; an image/label count
/// mismatch is a length error.
RawDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset to an IDX image/label file pair.  Inputs must be
/// {N, 1, rows, cols} with values in [0, 1]; values are scaled back to bytes
/// by rounding value * 255.  write_idx followed by load_idx is an identity on
/// datasets whose pixels are exact multiples of 1/255 (anything produced by
/// load_idx qualifies).
void write_idx(const std::string& images_path, const std::string& labels_path,
               const RawDataset& data);

/// Reads a CIFAR-100 binary file: a sequence of 3074-byte records, each a
/// coarse label byte, a fine label byte, and a 3072-byte 3x32x32 image in
/// channel-major order.  `labels` receives the fine labels, `coarse_labels`
/// the coarse ones.  An empty file yields an empty dataset; a trailing
/// partial record is a format error.
RawDataset load_cifar100(const std::string& bin_path);

/// Reads a precomputed embedding table: 8-byte magic "MARKEMB1", then
/// little-endian u32 count and dim, then count*dim float32 values in row
/// order.  The row index is the sample's global index (see TaskDataset).
Tensor load_embeddings(const std::string& path);

/// Writes an embedding table in the format load_embeddings reads.  The tensor
/// must be rank 2 ({count, dim}).
void save_embeddings(const std::string& path, const Tensor& table);

} // namespace mark
