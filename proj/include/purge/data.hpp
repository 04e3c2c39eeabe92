#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

namespace purge {

using PointId = std::int64_t;

struct DataPoint {
    PointId id = 0;
    std::vector<double> features;
    std::size_t label = 0;
};

/// Labelled points with stable integer ids. Ids are unique within a dataset;
/// the same id in a teacher and a student dataset denotes the same point.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t num_classes, std::size_t feature_dim);

    /// Throws DimensionError on a feature-length mismatch and InvalidArgument
    /// on a duplicate id or an out-of-range label.
    void add(DataPoint point);

    const std::vector<DataPoint>& points() const noexcept { return points_; }
    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t feature_dim() const noexcept { return feature_dim_; }

    bool contains(PointId id) const { return index_.contains(id); }
    const DataPoint& at(PointId id) const;  // NotFoundError
    std::vector<PointId> ids() const;

    /// Points whose ids appear in `ids`, in that order.
    Dataset subset(std::span<const PointId> ids) const;

    friend bool operator==(const Dataset& a, const Dataset& b);

private:
    std::size_t num_classes_ = 1;
    std::size_t feature_dim_ = 1;
    std::vector<DataPoint> points_;
    std::unordered_map<PointId, std::size_t> index_;
};

/// Gaussian blobs: each class centre is drawn uniformly from
/// [-class_center_spread, class_center_spread]^feature_dim, then points are
/// drawn isotropically around it. Ids run first_id, first_id+1, ... in class
/// order.
struct SyntheticSpec {
    std::size_t num_classes = 2;
    std::size_t points_per_class = 100;
    std::size_t feature_dim = 2;
    double class_center_spread = 4.0;
    double within_class_stddev = 1.0;
    std::uint64_t seed = 0;
    PointId first_id = 0;

    void validate() const;
};

Dataset gen_synthetic(const SyntheticSpec& spec);

/// Rows are `id,label,f1,...,fd`. num_classes = 1 + max label.
Dataset load_csv(const std::filesystem::path& path, bool has_header);

/// Writes with round-trip precision so load_csv restores identical doubles.
void save_csv(const Dataset& dataset, const std::filesystem::path& path, bool with_header = true);

/// Seeded split: `holdout_fraction` of the points (rounded down) go to
/// `holdout`, the rest to `kept`. Relative order inside each part is the
/// original order.
struct DatasetSplit {
    Dataset kept;
    Dataset holdout;
};
DatasetSplit split_dataset(const Dataset& dataset, double holdout_fraction, std::uint64_t seed);

/// Position of a point inside a plan. All indices are 0-based.
struct Location {
    std::size_t shard = 0;
    std::size_t chunk = 0;
    std::size_t slice = 0;

    friend auto operator<=>(const Location&, const Location&) = default;
};

/// shard -> chunk -> slice hierarchy over point ids. The only mutation is
/// remove(); everything else is fixed at construction.
class PartitionPlan {
public:
    using Slice = std::vector<PointId>;
    struct Chunk {
        std::vector<Slice> slices;
        friend bool operator==(const Chunk&, const Chunk&) = default;
    };
    struct Shard {
        std::vector<Chunk> chunks;
        friend bool operator==(const Shard&, const Shard&) = default;
    };

    PartitionPlan() = default;

    /// Rebuilds a plan from explicit groups (e.g. a stored manifest).
    /// Throws PartitionError if an id appears twice or a level is empty.
    static PartitionPlan from_groups(std::vector<Shard> shards, std::uint64_t seed);

    const std::vector<Shard>& shards() const noexcept { return shards_; }
    const Shard& shard(std::size_t k) const { return shards_.at(k); }
    const Slice& slice(const Location& at) const;
    std::size_t num_shards() const noexcept { return shards_.size(); }
    std::size_t num_chunks(std::size_t k) const { return shards_.at(k).chunks.size(); }
    std::size_t num_slices(std::size_t k, std::size_t l) const {
        return shards_.at(k).chunks.at(l).slices.size();
    }
    /// Σ_l R_{k,l}
    std::size_t total_slices(std::size_t k) const;
    std::uint64_t seed() const noexcept { return seed_; }

    std::size_t size() const noexcept { return index_.size(); }
    std::size_t shard_size(std::size_t k) const;
    std::size_t chunk_size(std::size_t k, std::size_t l) const;

    bool contains(PointId id) const { return index_.contains(id); }
    Location locate(PointId id) const;  // NotFoundError
    void remove(PointId id);            // NotFoundError

    /// Every id in plan order (shard, chunk, slice, position).
    std::vector<PointId> all_ids() const;
    std::vector<PointId> shard_ids(std::size_t k) const;

    friend bool operator==(const PartitionPlan& a, const PartitionPlan& b) {
        return a.seed_ == b.seed_ && a.shards_ == b.shards_;
    }

private:
    friend PartitionPlan make_partition(std::span<const PointId>, std::size_t,
                                        std::span<const std::size_t>,
                                        const std::vector<std::vector<std::size_t>>&,
                                        std::uint64_t);
    void rebuild_index();

    std::vector<Shard> shards_;
    std::unordered_map<PointId, Location> index_;
    std::uint64_t seed_ = 0;
};

/// Uniform random partitioning: a seeded permutation of `ids` is split as
/// evenly as possible into shards, each shard into chunks, each chunk into
/// slices. Remainders go to the lowest-index groups. Throws PartitionError
/// when any level has more groups than points.
PartitionPlan make_partition(std::span<const PointId> ids, std::size_t num_shards,
                             std::span<const std::size_t> chunks_per_shard,
                             const std::vector<std::vector<std::size_t>>& slices_per_chunk,
                             std::uint64_t seed);
PartitionPlan make_partition(const Dataset& dataset, std::size_t num_shards,
                             std::span<const std::size_t> chunks_per_shard,
                             const std::vector<std::vector<std::size_t>>& slices_per_chunk,
                             std::uint64_t seed);

/// Splits `count` items into `groups` sizes differing by at most one, larger
/// groups first.
std::vector<std::size_t> even_split(std::size_t count, std::size_t groups);

Location locate_point(const PartitionPlan& plan, PointId id);
PartitionPlan remove_point(PartitionPlan plan, PointId id);

}  // namespace purge
