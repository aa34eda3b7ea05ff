// SPDX-License-Identifier: Apache-2.0
#include "mark/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mark/binary_io.hpp"
#include "mark/errors.hpp"

namespace mark {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'K', 'C', 'K', 'P', 'T'};
constexpr uint16_t kVersion = 1;

} // namespace

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);

    char magic[8];
    read_exact(in, magic, sizeof(magic), "checkpoint magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw format_error("not a MARKCKPT file: " + path);
    const uint16_t version = read_u16_le(in, "checkpoint version");
    if (version != kVersion)
        throw format_error("unsupported checkpoint version " + std::to_string(version) +
                           " (this build reads version 1)");

    const uint32_t count = read_u32_le(in, "checkpoint tensor count");
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    std::set<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const uint16_t name_len = read_u16_le(in, "tensor name length");
        e.name.resize(name_len);
        read_exact(in, e.name.data(), name_len, "tensor name");
        if (!seen.insert(e.name).second)
            throw format_error("duplicate tensor name '" + e.name + "' in " + path);

        uint8_t rank = 0;
        read_exact(in, &rank, 1, "tensor rank of '" + e.name + "'");
        size_t numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            const uint32_t dim = read_u32_le(in, "dimensions of '" + e.name + "'");
            e.shape.push_back(dim);
            numel *= dim;
        }
        e.values.resize(numel);
        read_f32_array_le(in, e.values.data(), numel, "payload of '" + e.name + "'");
        entries.push_back(std::move(e));
    }

    char extra;
    if (in.read(&extra, 1).gcount() != 0)
        throw format_error("trailing bytes after the last tensor in " + path);
    return entries;
}

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    if (entries.size() > UINT32_MAX)
        throw format_error("too many tensors for the container");
    std::set<std::string> seen;
    for (const CheckpointEntry& e : entries) {
        if (!seen.insert(e.name).second)
            throw contract_error("write_checkpoint: duplicate tensor name '" + e.name + "'");
        if (e.name.size() > UINT16_MAX)
            throw format_error("tensor name too long for the container: " + e.name);
        if (e.shape.size() > UINT8_MAX)
            throw format_error("tensor rank too large for the container: " + e.name);
        size_t numel = 1;
        for (size_t dim : e.shape) {
            if (dim > UINT32_MAX)
                throw format_error("tensor dimension too large for the container: " +
                                   e.name);
            numel *= dim;
        }
        if (numel != e.values.size())
            throw shape_error("write_checkpoint: '" + e.name + "' has " +
                              std::to_string(e.values.size()) + " values for a shape of " +
                              std::to_string(numel));
    }

    std::ostringstream body(std::ios::binary);
    write_bytes(body, kMagic, sizeof(kMagic));
    write_u16_le(body, kVersion);
    write_u32_le(body, static_cast<uint32_t>(entries.size()));
    for (const CheckpointEntry& e : entries) {
        write_u16_le(body, static_cast<uint16_t>(e.name.size()));
        write_bytes(body, e.name.data(), e.name.size());
        const uint8_t rank = static_cast<uint8_t>(e.shape.size());
        write_bytes(body, &rank, 1);
        for (size_t dim : e.shape) write_u32_le(body, static_cast<uint32_t>(dim));
        write_f32_array_le(body, e.values.data(), e.values.size());
    }

    // Temp-and-rename so a crash mid-write never leaves a torn checkpoint.
    const std::filesystem::path target(path);
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot write checkpoint: " + tmp.string());
        const std::string bytes = body.str();
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw io_error("short write on checkpoint: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw io_error("cannot move checkpoint into place: " + target.string() + " (" +
                       ec.message() + ")");
    }
}

void save_checkpoint(ModelState& model, const std::string& path) {
    std::vector<CheckpointEntry> entries;
    for (const NamedArray& a : collect_state(model))
        entries.push_back({a.name, a.shape, *a.values});
    write_checkpoint(path, entries);
}

void load_checkpoint(ModelState& model, const std::string& path) {
    const std::vector<CheckpointEntry> entries = read_checkpoint(path);
    const std::vector<NamedArray> state = collect_state(model);

    if (entries.size() != state.size())
        throw format_error("checkpoint holds " + std::to_string(entries.size()) +
                           " tensors but the model has " + std::to_string(state.size()) +
                           " — was it saved from a different task layout?");

    // Match by name so reordering in a future writer stays loadable.
    for (const NamedArray& a : state) {
        const CheckpointEntry* found = nullptr;
        for (const CheckpointEntry& e : entries)
            if (e.name == a.name) {
                found = &e;
                break;
            }
        if (!found)
            throw format_error("checkpoint is missing tensor '" + a.name + "'");
        if (found->shape != a.shape)
            throw format_error("checkpoint tensor '" + a.name +
                               "' has a different shape than the model");
        *a.values = found->values;
    }
}

} // namespace mark
