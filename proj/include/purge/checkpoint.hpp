#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "purge/model.hpp"

namespace purge {

enum class Role : std::uint8_t { teacher = 0, student = 1 };

std::string to_string(Role role);

/// Addresses a saved state S_{k,l,j}. `chunk` and `slice` are 1-based
/// ("after slice j of chunk l"); teachers always use chunk 1. generation 0
/// in a lookup means "latest".
struct CheckpointKey {
    Role role = Role::student;
    std::uint32_t constituent = 0;
    std::uint32_t chunk = 1;
    std::uint32_t slice = 1;
    std::uint32_t generation = 0;

    auto slot() const { return std::tuple(role, constituent, chunk, slice); }
    friend bool operator==(const CheckpointKey&, const CheckpointKey&) = default;
};

struct CheckpointRecord {
    CheckpointKey key;
    ModelState state;
    /// Teacher indices behind the labels of the checkpoint's chunk (students).
    std::vector<std::uint32_t> provenance;
    std::uint64_t byte_size = 0;

    friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

/// On-disk format, little-endian throughout:
///   magic "PURGECKP" | u32 version | u8 role | u32 k | u32 l | u32 j | u32 gen
///   | u8 arch kind | u32 feature_dim | u32 num_classes | u32 hidden_units
///   | u64 rng_cursor | u64 param_count | f64 params[param_count]
///   | u32 provenance_count | u32 provenance[provenance_count]
std::vector<std::uint8_t> encode_checkpoint(const CheckpointRecord& record);
CheckpointRecord decode_checkpoint(std::span<const std::uint8_t> bytes);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct SaveReceipt {
    CheckpointKey key;  // with the assigned generation
    std::uint64_t byte_size = 0;
};

struct StorageReport {
    struct Totals {
        std::uint64_t bytes = 0;
        std::uint64_t records = 0;         // every generation
        std::uint64_t latest_records = 0;  // one per slot
        friend bool operator==(const Totals&, const Totals&) = default;
    };
    Totals teacher;
    Totals student;

    std::uint64_t total_bytes() const { return teacher.bytes + student.bytes; }
};

/// Generational store of encoded checkpoints. Default-constructed stores live
/// in memory; a store opened on a directory also writes
/// `<root>/<role>/<k>/<l>/<j>/<gen>.ckpt` and reloads that tree on open.
/// Saves to distinct slots may run concurrently.
class CheckpointStore {
public:
    CheckpointStore() = default;
    explicit CheckpointStore(std::filesystem::path root);

    CheckpointStore(const CheckpointStore& other);
    CheckpointStore& operator=(const CheckpointStore&) = delete;

    /// Assigns the next generation of the key's slot (1 for a new slot).
    SaveReceipt save(const CheckpointKey& key, const ModelState& state,
                     std::vector<std::uint32_t> provenance = {});

    /// key.generation == 0 resolves the newest generation. NotFoundError when
    /// the slot or generation is missing.
    CheckpointRecord load(const CheckpointKey& key) const;

    bool contains(const CheckpointKey& key) const;
    std::uint32_t latest_generation(const CheckpointKey& key) const;  // 0 when absent
    std::vector<CheckpointKey> keys() const;  // every stored generation

    StorageReport storage_report() const;

    /// Drops every generation but the newest; returns how many were removed.
    std::size_t prune();

    const std::optional<std::filesystem::path>& root() const noexcept { return root_; }
    std::filesystem::path path_of(const CheckpointKey& key) const;

private:
    using Slot = std::tuple<Role, std::uint32_t, std::uint32_t, std::uint32_t>;

    std::optional<std::filesystem::path> root_;
    mutable std::mutex mutex_;
    std::map<Slot, std::map<std::uint32_t, std::vector<std::uint8_t>>> records_;
};

StorageReport storage_report(const CheckpointStore& store);

}  // namespace purge
