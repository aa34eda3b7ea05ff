// SPDX-License-Identifier: Apache-2.0
#include "mark/data_io.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mark/binary_io.hpp"
#include "mark/errors.hpp"

namespace mark {

namespace {

constexpr uint32_t kIdxImageMagic = 0x00000803; // unsigned byte, 3 dimensions
constexpr uint32_t kIdxLabelMagic = 0x00000801; // unsigned byte, 1 dimension
constexpr size_t kCifarRecordBytes = 3074;      // coarse + fine + 3*32*32 pixels

std::string hex_u32(uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::uppercase << v;
    return os.str();
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path + " for reading");
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    return out;
}

uint64_t file_size_of(const std::string& path) {
    std::error_code ec;
    const auto n = std::filesystem::file_size(path, ec);
    if (ec) throw io_error("cannot stat " + path + ": " + ec.message());
    return n;
}

} // namespace

RawDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto images = open_input(images_path);
    const uint32_t image_magic = read_u32_be(images, images_path);
    if (image_magic != kIdxImageMagic)
        throw format_error(images_path + ": bad magic " + hex_u32(image_magic) +
                           " at byte offset 0 (expected " + hex_u32(kIdxImageMagic) + ")");
    const uint32_t count = read_u32_be(images, images_path);
    const uint32_t rows = read_u32_be(images, images_path);
    const uint32_t cols = read_u32_be(images, images_path);
    if (rows == 0 || cols == 0)
        throw format_error(images_path + ": zero image dimensions " + std::to_string(rows) +
                           "x" + std::to_string(cols));

    const uint64_t pixel_count = uint64_t(count) * rows * cols;
    const uint64_t expected = 16 + pixel_count;
    const uint64_t actual = file_size_of(images_path);
    if (actual != expected)
        throw format_error(images_path + ": length mismatch, header promises " +
                           std::to_string(expected) + " bytes but file has " +
                           std::to_string(actual));

    std::vector<unsigned char> pixels(pixel_count);
    if (pixel_count > 0) read_exact(images, pixels.data(), pixels.size(), images_path);

    auto labels_in = open_input(labels_path);
    const uint32_t label_magic = read_u32_be(labels_in, labels_path);
    if (label_magic != kIdxLabelMagic)
        throw format_error(labels_path + ": bad magic " + hex_u32(label_magic) +
                           " at byte offset 0 (expected " + hex_u32(kIdxLabelMagic) + ")");
    const uint32_t label_count = read_u32_be(labels_in, labels_path);
    if (label_count != count)
        throw format_error(labels_path + ": length mismatch, " + std::to_string(label_count) +
                           " labels for " + std::to_string(count) + " images");
    const uint64_t label_expected = 8 + uint64_t(label_count);
    const uint64_t label_actual = file_size_of(labels_path);
    if (label_actual != label_expected)
        throw format_error(labels_path + ": length mismatch, header promises " +
                           std::to_string(label_expected) + " bytes but file has " +
                           std::to_string(label_actual));

    std::vector<unsigned char> label_bytes(label_count);
    if (label_count > 0) read_exact(labels_in, label_bytes.data(), label_bytes.size(), labels_path);

    RawDataset out;
    std::vector<float> values(pixel_count);
    for (size_t i = 0; i < values.size(); ++i) values[i] = float(pixels[i]) / 255.0f;
    out.inputs = Tensor::from_data({size_t(count), 1, size_t(rows), size_t(cols)},
                                   std::move(values));
    out.labels.resize(label_count);
    for (size_t i = 0; i < out.labels.size(); ++i) out.labels[i] = int(label_bytes[i]);
    return out;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const RawDataset& data) {
    if (!data.inputs.defined() || data.inputs.rank() != 4 || data.inputs.dim(1) != 1)
        throw value_error("write_idx expects {N, 1, rows, cols} inputs, got " +
                          (data.inputs.defined() ? shape_str(data.inputs.shape())
                                                 : std::string("undefined")));
    const size_t count = data.inputs.dim(0);
    if (data.labels.size() != count)
        throw value_error("write_idx: " + std::to_string(data.labels.size()) + " labels for " +
                          std::to_string(count) + " images");

    auto images = open_output(images_path);
    write_u32_be(images, kIdxImageMagic);
    write_u32_be(images, uint32_t(count));
    write_u32_be(images, uint32_t(data.inputs.dim(2)));
    write_u32_be(images, uint32_t(data.inputs.dim(3)));
    const std::vector<float>& values = data.inputs.data();
    std::vector<unsigned char> pixels(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        const float v = values[i];
        if (!(v >= 0.0f && v <= 1.0f))
            throw value_error("write_idx: pixel " + std::to_string(i) + " value " +
                              std::to_string(v) + " outside [0, 1]");
        pixels[i] = static_cast<unsigned char>(std::lround(double(v) * 255.0));
    }
    if (!pixels.empty()) write_bytes(images, pixels.data(), pixels.size());
    if (!images) throw io_error("failed writing " + images_path);

    auto labels = open_output(labels_path);
    write_u32_be(labels, kIdxLabelMagic);
    write_u32_be(labels, uint32_t(count));
    std::vector<unsigned char> label_bytes(count);
    for (size_t i = 0; i < count; ++i) {
        const int label = data.labels[i];
        if (label < 0 || label > 255)
            throw value_error("write_idx: label " + std::to_string(label) +
                              " does not fit in a byte");
        label_bytes[i] = static_cast<unsigned char>(label);
    }
    if (!label_bytes.empty()) write_bytes(labels, label_bytes.data(), label_bytes.size());
    if (!labels) throw io_error("failed writing " + labels_path);
}

RawDataset load_cifar100(const std::string& bin_path) {
    const uint64_t total = file_size_of(bin_path);
    if (total % kCifarRecordBytes != 0)
        throw format_error(bin_path + ": size " + std::to_string(total) +
                           " is not a multiple of the " + std::to_string(kCifarRecordBytes) +
                           "-byte record (trailing partial record)");
    const size_t count = size_t(total / kCifarRecordBytes);

    RawDataset out;
    if (count == 0) return out; // empty file: zero records, not an error
    out.labels.resize(count);
    out.coarse_labels.resize(count);
    std::vector<float> values(count * 3072);

    auto in = open_input(bin_path);
    std::vector<unsigned char> record(kCifarRecordBytes);
    for (size_t r = 0; r < count; ++r) {
        read_exact(in, record.data(), record.size(), bin_path);
        out.coarse_labels[r] = int(record[0]);
        out.labels[r] = int(record[1]);
        for (size_t i = 0; i < 3072; ++i)
            values[r * 3072 + i] = float(record[2 + i]) / 255.0f;
    }
    out.inputs = Tensor::from_data({count, 3, 32, 32}, std::move(values));
    return out;
}

namespace {
constexpr char kEmbeddingMagic[8] = {'M', 'A', 'R', 'K', 'E', 'M', 'B', '1'};
}

Tensor load_embeddings(const std::string& path) {
    auto in = open_input(path);
    char magic[8];
    read_exact(in, magic, 8, path);
    if (!std::equal(magic, magic + 8, kEmbeddingMagic))
        throw format_error(path + ": bad magic at byte offset 0 (expected MARKEMB1)");
    const uint32_t count = read_u32_le(in, path);
    const uint32_t dim = read_u32_le(in, path);
    if (count == 0 || dim == 0)
        throw format_error(path + ": empty embedding table (" + std::to_string(count) + "x" +
                           std::to_string(dim) + ")");
    const uint64_t expected = 16 + uint64_t(count) * dim * 4;
    const uint64_t actual = file_size_of(path);
    if (actual != expected)
        throw format_error(path + ": length mismatch, header promises " +
                           std::to_string(expected) + " bytes but file has " +
                           std::to_string(actual));
    std::vector<float> values(size_t(count) * dim);
    read_f32_array_le(in, values.data(), values.size(), path);
    return Tensor::from_data({size_t(count), size_t(dim)}, std::move(values));
}

void save_embeddings(const std::string& path, const Tensor& table) {
    if (!table.defined() || table.rank() != 2)
        throw value_error("save_embeddings expects a rank-2 table, got " +
                          (table.defined() ? shape_str(table.shape()) : std::string("undefined")));
    auto out = open_output(path);
    write_bytes(out, kEmbeddingMagic, 8);
    write_u32_le(out, uint32_t(table.dim(0)));
    write_u32_le(out, uint32_t(table.dim(1)));
    write_f32_array_le(out, table.data().data(), table.numel());
    if (!out) throw io_error("failed writing " + path);
}

} // namespace mark
