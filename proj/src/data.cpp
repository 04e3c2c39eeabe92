#include "purge/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>

#include "purge/error.hpp"
#include "purge/rng.hpp"

namespace purge {

Dataset::Dataset(std::size_t num_classes, std::size_t feature_dim)
    : num_classes_(num_classes), feature_dim_(feature_dim) {
    if (num_classes == 0 || feature_dim == 0)
        throw InvalidArgument("dataset needs at least one class and one feature");
}

void Dataset::add(DataPoint point) {
    if (point.features.size() != feature_dim_)
        throw DimensionError("point " + std::to_string(point.id) + " has " +
                             std::to_string(point.features.size()) + " features, expected " +
                             std::to_string(feature_dim_));
    if (point.label >= num_classes_)
        throw InvalidArgument("point " + std::to_string(point.id) + " label " +
                              std::to_string(point.label) + " out of range");
    if (index_.contains(point.id))
        throw InvalidArgument("duplicate point id " + std::to_string(point.id));
    index_.emplace(point.id, points_.size());
    points_.push_back(std::move(point));
}

const DataPoint& Dataset::at(PointId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("point " + std::to_string(id) + " not in dataset");
    return points_[it->second];
}

std::vector<PointId> Dataset::ids() const {
    std::vector<PointId> out;
    out.reserve(points_.size());
    for (const auto& p : points_) out.push_back(p.id);
    return out;
}

Dataset Dataset::subset(std::span<const PointId> ids) const {
    Dataset out(num_classes_, feature_dim_);
    for (auto id : ids) out.add(at(id));
    return out;
}

bool operator==(const Dataset& a, const Dataset& b) {
    if (a.num_classes_ != b.num_classes_ || a.feature_dim_ != b.feature_dim_ ||
        a.points_.size() != b.points_.size())
        return false;
    for (std::size_t i = 0; i < a.points_.size(); ++i) {
        const auto& p = a.points_[i];
        const auto& q = b.points_[i];
        if (p.id != q.id || p.label != q.label || p.features != q.features) return false;
    }
    return true;
}

void SyntheticSpec::validate() const {
    if (num_classes == 0 || points_per_class == 0 || feature_dim == 0)
        throw InvalidArgument("synthetic spec counts must be positive");
    if (!(within_class_stddev > 0.0)) throw InvalidArgument("within_class_stddev must be > 0");
    if (!(class_center_spread >= 0.0)) throw InvalidArgument("class_center_spread must be >= 0");
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, {0x5ca1ab1e}));

    std::vector<std::vector<double>> centers(spec.num_classes, std::vector<double>(spec.feature_dim));
    for (auto& c : centers)
        for (auto& x : c) x = rng.uniform(-spec.class_center_spread, spec.class_center_spread);

    Dataset out(spec.num_classes, spec.feature_dim);
    PointId id = spec.first_id;
    for (std::size_t label = 0; label < spec.num_classes; ++label) {
        for (std::size_t i = 0; i < spec.points_per_class; ++i) {
            DataPoint p{id++, std::vector<double>(spec.feature_dim), label};
            for (std::size_t d = 0; d < spec.feature_dim; ++d)
                p.features[d] = centers[label][d] + spec.within_class_stddev * rng.normal();
            out.add(std::move(p));
        }
    }
    return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        fields.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_field(std::string_view s, T& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());

    struct Row {
        PointId id;
        std::size_t label;
        std::vector<double> features;
    };
    std::vector<Row> rows;
    std::size_t dim = 0;
    std::size_t max_label = 0;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
            line.erase(0, 3);
        if (has_header && line_no == 1) continue;
        if (trim(line).empty()) continue;

        const auto fields = split_commas(line);
        const auto where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() < 3)
            throw ParseError(where + ": expected id,label,f1,...; got " + std::to_string(fields.size()) +
                             " field(s)");
        Row row{};
        if (!parse_field(fields[0], row.id)) throw ParseError(where + ": bad id");
        if (!parse_field(fields[1], row.label)) throw ParseError(where + ": bad label");
        row.features.resize(fields.size() - 2);
        for (std::size_t i = 2; i < fields.size(); ++i)
            if (!parse_field(fields[i], row.features[i - 2]))
                throw ParseError(where + ": bad feature in column " + std::to_string(i + 1));

        if (rows.empty()) {
            dim = row.features.size();
        } else if (row.features.size() != dim) {
            throw DimensionError(where + ": row has " + std::to_string(row.features.size()) +
                                 " features, earlier rows have " + std::to_string(dim));
        }
        max_label = std::max(max_label, row.label);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(path.string() + ": no data rows");

    Dataset out(max_label + 1, dim);
    for (auto& r : rows) {
        if (out.contains(r.id)) throw ParseError(path.string() + ": duplicate id " + std::to_string(r.id));
        out.add(DataPoint{r.id, std::move(r.features), r.label});
    }
    return out;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path, bool with_header) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    if (with_header) {
        out << "id,label";
        for (std::size_t d = 1; d <= dataset.feature_dim(); ++d) out << ",f" << d;
        out << '\n';
    }
    char buf[64];
    for (const auto& p : dataset.points()) {
        out << p.id << ',' << p.label;
        for (double x : p.features) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

DatasetSplit split_dataset(const Dataset& dataset, double holdout_fraction, std::uint64_t seed) {
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
        throw InvalidArgument("holdout fraction must be in [0, 1)");
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, {0x5711}));
    rng.shuffle(std::span(order));
    const auto n_hold = static_cast<std::size_t>(holdout_fraction * static_cast<double>(dataset.size()));
    std::vector<bool> held(dataset.size(), false);
    for (std::size_t i = 0; i < n_hold; ++i) held[order[i]] = true;

    DatasetSplit out{Dataset(dataset.num_classes(), dataset.feature_dim()),
                     Dataset(dataset.num_classes(), dataset.feature_dim())};
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (held[i] ? out.holdout : out.kept).add(dataset.points()[i]);
    return out;
}

std::vector<std::size_t> even_split(std::size_t count, std::size_t groups) {
    std::vector<std::size_t> sizes(groups, count / groups);
    for (std::size_t g = 0; g < count % groups; ++g) ++sizes[g];
    return sizes;
}

PartitionPlan make_partition(std::span<const PointId> ids, std::size_t num_shards,
                             std::span<const std::size_t> chunks_per_shard,
                             const std::vector<std::vector<std::size_t>>& slices_per_chunk,
                             std::uint64_t seed) {
    if (num_shards == 0) throw PartitionError("need at least one shard");
    if (chunks_per_shard.size() != num_shards)
        throw PartitionError("chunks_per_shard has " + std::to_string(chunks_per_shard.size()) +
                             " entries for " + std::to_string(num_shards) + " shards");
    if (slices_per_chunk.size() != num_shards)
        throw PartitionError("slices_per_chunk must have one entry per shard");
    for (std::size_t k = 0; k < num_shards; ++k) {
        if (chunks_per_shard[k] == 0) throw PartitionError("shard " + std::to_string(k) + " has zero chunks");
        if (slices_per_chunk[k].size() != chunks_per_shard[k])
            throw PartitionError("shard " + std::to_string(k) + ": slice counts do not match chunk count");
        for (auto r : slices_per_chunk[k])
            if (r == 0) throw PartitionError("shard " + std::to_string(k) + " has a chunk with zero slices");
    }
    if (ids.size() < num_shards)
        throw PartitionError(std::to_string(num_shards) + " shards for " + std::to_string(ids.size()) + " points");

    std::vector<PointId> order(ids.begin(), ids.end());
    {
        std::unordered_set<PointId> seen(order.begin(), order.end());
        if (seen.size() != order.size()) throw PartitionError("duplicate point ids");
    }
    Rng rng(derive_seed(seed, {0x9a27}));
    rng.shuffle(std::span(order));

    PartitionPlan plan;
    plan.seed_ = seed;
    plan.shards_.resize(num_shards);
    auto cursor = order.begin();
    const auto shard_sizes = even_split(order.size(), num_shards);
    for (std::size_t k = 0; k < num_shards; ++k) {
        const auto chunk_sizes = even_split(shard_sizes[k], chunks_per_shard[k]);
        if (shard_sizes[k] < chunks_per_shard[k])
            throw PartitionError("shard " + std::to_string(k) + " has " + std::to_string(shard_sizes[k]) +
                                 " points for " + std::to_string(chunks_per_shard[k]) + " chunks");
        auto& shard = plan.shards_[k];
        shard.chunks.resize(chunks_per_shard[k]);
        for (std::size_t l = 0; l < chunks_per_shard[k]; ++l) {
            const auto r = slices_per_chunk[k][l];
            if (chunk_sizes[l] < r)
                throw PartitionError("chunk (" + std::to_string(k) + "," + std::to_string(l) + ") has " +
                                     std::to_string(chunk_sizes[l]) + " points for " + std::to_string(r) +
                                     " slices");
            const auto slice_sizes = even_split(chunk_sizes[l], r);
            auto& chunk = shard.chunks[l];
            chunk.slices.resize(r);
            for (std::size_t j = 0; j < r; ++j) {
                chunk.slices[j].assign(cursor, cursor + static_cast<std::ptrdiff_t>(slice_sizes[j]));
                cursor += static_cast<std::ptrdiff_t>(slice_sizes[j]);
            }
        }
    }
    plan.rebuild_index();
    return plan;
}

PartitionPlan make_partition(const Dataset& dataset, std::size_t num_shards,
                             std::span<const std::size_t> chunks_per_shard,
                             const std::vector<std::vector<std::size_t>>& slices_per_chunk,
                             std::uint64_t seed) {
    const auto ids = dataset.ids();
    return make_partition(ids, num_shards, chunks_per_shard, slices_per_chunk, seed);
}

PartitionPlan PartitionPlan::from_groups(std::vector<Shard> shards, std::uint64_t seed) {
    if (shards.empty()) throw PartitionError("plan needs at least one shard");
    for (const auto& s : shards) {
        if (s.chunks.empty()) throw PartitionError("shard without chunks");
        for (const auto& c : s.chunks)
            if (c.slices.empty()) throw PartitionError("chunk without slices");
    }
    PartitionPlan plan;
    plan.shards_ = std::move(shards);
    plan.seed_ = seed;
    plan.rebuild_index();
    return plan;
}

void PartitionPlan::rebuild_index() {
    index_.clear();
    for (std::size_t k = 0; k < shards_.size(); ++k)
        for (std::size_t l = 0; l < shards_[k].chunks.size(); ++l)
            for (std::size_t j = 0; j < shards_[k].chunks[l].slices.size(); ++j)
                for (auto id : shards_[k].chunks[l].slices[j])
                    if (!index_.emplace(id, Location{k, l, j}).second)
                        throw PartitionError("point " + std::to_string(id) + " appears twice in plan");
}

const PartitionPlan::Slice& PartitionPlan::slice(const Location& at) const {
    return shards_.at(at.shard).chunks.at(at.chunk).slices.at(at.slice);
}

std::size_t PartitionPlan::total_slices(std::size_t k) const {
    std::size_t n = 0;
    for (const auto& c : shards_.at(k).chunks) n += c.slices.size();
    return n;
}

std::size_t PartitionPlan::shard_size(std::size_t k) const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < num_chunks(k); ++l) n += chunk_size(k, l);
    return n;
}

std::size_t PartitionPlan::chunk_size(std::size_t k, std::size_t l) const {
    std::size_t n = 0;
    for (const auto& s : shards_.at(k).chunks.at(l).slices) n += s.size();
    return n;
}

Location PartitionPlan::locate(PointId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("point " + std::to_string(id) + " not in partition plan");
    return it->second;
}

void PartitionPlan::remove(PointId id) {
    const auto at = locate(id);
    auto& s = shards_[at.shard].chunks[at.chunk].slices[at.slice];
    s.erase(std::find(s.begin(), s.end(), id));
    index_.erase(id);
}

std::vector<PointId> PartitionPlan::all_ids() const {
    std::vector<PointId> out;
    out.reserve(size());
    for (std::size_t k = 0; k < shards_.size(); ++k) {
        auto s = shard_ids(k);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

std::vector<PointId> PartitionPlan::shard_ids(std::size_t k) const {
    std::vector<PointId> out;
    for (const auto& c : shards_.at(k).chunks)
        for (const auto& s : c.slices) out.insert(out.end(), s.begin(), s.end());
    return out;
}

Location locate_point(const PartitionPlan& plan, PointId id) { return plan.locate(id); }

PartitionPlan remove_point(PartitionPlan plan, PointId id) {
    plan.remove(id);
    return plan;
}

}  // namespace purge
