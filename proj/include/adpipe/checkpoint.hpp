#pragma once

#include <cstdint>
#include <string>

#include "adpipe/dataio.hpp"
#include "adpipe/param_store.hpp"

namespace adpipe {

/// Named-parameter checkpoint, little-endian throughout:
///   magic "DADC" | u32 version=1 | u64 block_count
///   per block: u32 name_len | name bytes | u32 rank | u64 dims[rank] |
///              f32 payload (row-major)
/// Blocks are written in name order, so identical stores produce identical
/// bytes.
std::uint64_t save_checkpoint(const ParamStore<float>& store, const std::string& path);
ParamStore<float> load_checkpoint(const std::string& path);

template <class T>
std::uint64_t save_checkpoint_as(const ParamStore<T>& store, const std::string& path) {
    return save_checkpoint(store.template cast<float>(), path);
}

template <class T>
ParamStore<T> load_checkpoint_as(const std::string& path) {
    return load_checkpoint(path).cast<T>();
}

}  // namespace adpipe
