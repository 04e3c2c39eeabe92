#include "purge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "purge/error.hpp"

namespace purge {

namespace {

constexpr char kMagic[8] = {'P', 'U', 'R', 'G', 'E', 'C', 'K', 'P'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) throw ParseError("checkpoint truncated");
    }
    template <class U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(in_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string to_string(Role role) { return role == Role::teacher ? "teacher" : "student"; }

std::vector<std::uint8_t> encode_checkpoint(const CheckpointRecord& r) {
    const auto& a = r.state.arch;
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.le<std::uint32_t>(kCheckpointVersion);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(r.key.role));
    w.le<std::uint32_t>(r.key.constituent);
    w.le<std::uint32_t>(r.key.chunk);
    w.le<std::uint32_t>(r.key.slice);
    w.le<std::uint32_t>(r.key.generation);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(a.kind));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(a.feature_dim));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(a.num_classes));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(a.hidden_units));
    w.le<std::uint64_t>(r.state.rng_cursor);
    w.le<std::uint64_t>(r.state.params.size());
    for (double v : r.state.params) w.f64(v);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.provenance.size()));
    for (auto t : r.provenance) w.le<std::uint32_t>(t);
    return w.take();
}

CheckpointRecord decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader rd(bytes);
    const auto magic = rd.take(sizeof kMagic);
    if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw ParseError("not a checkpoint (bad magic)");
    if (const auto v = rd.le<std::uint32_t>(); v != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(v));

    CheckpointRecord r;
    const auto role = rd.le<std::uint8_t>();
    if (role > 1) throw ParseError("bad checkpoint role");
    r.key.role = static_cast<Role>(role);
    r.key.constituent = rd.le<std::uint32_t>();
    r.key.chunk = rd.le<std::uint32_t>();
    r.key.slice = rd.le<std::uint32_t>();
    r.key.generation = rd.le<std::uint32_t>();
    const auto kind = rd.le<std::uint8_t>();
    if (kind > 1) throw ParseError("bad model kind in checkpoint");
    auto& a = r.state.arch;
    a.kind = static_cast<ModelKind>(kind);
    a.feature_dim = rd.le<std::uint32_t>();
    a.num_classes = rd.le<std::uint32_t>();
    a.hidden_units = rd.le<std::uint32_t>();
    r.state.rng_cursor = rd.le<std::uint64_t>();
    const auto n = rd.le<std::uint64_t>();
    if (n != a.param_count()) throw ParseError("checkpoint parameter count does not match its arch");
    rd.need(n * 8);
    r.state.params.resize(n);
    for (auto& v : r.state.params) v = rd.f64();
    const auto np = rd.le<std::uint32_t>();
    r.provenance.resize(np);
    for (auto& t : r.provenance) t = rd.le<std::uint32_t>();
    if (!rd.done()) throw ParseError("trailing bytes after checkpoint");
    r.byte_size = bytes.size();
    return r;
}

CheckpointStore::CheckpointStore(std::filesystem::path root) : root_(std::move(root)) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(*root_, ec);
    if (ec) throw IoError("cannot create checkpoint root " + root_->string() + ": " + ec.message());
    for (const auto& entry : fs::recursive_directory_iterator(*root_)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".ckpt") continue;
        auto bytes = read_file(entry.path());
        const auto rec = decode_checkpoint(bytes);
        if (path_of(rec.key) != entry.path())
            throw ParseError("checkpoint " + entry.path().string() + " is stored under the wrong path");
        records_[rec.key.slot()][rec.key.generation] = std::move(bytes);
    }
}

CheckpointStore::CheckpointStore(const CheckpointStore& other) {
    std::lock_guard lock(other.mutex_);
    records_ = other.records_;
    // Copies are detached from the directory so they can never clobber it.
}

std::filesystem::path CheckpointStore::path_of(const CheckpointKey& key) const {
    if (!root_) return {};
    return *root_ / to_string(key.role) / std::to_string(key.constituent) / std::to_string(key.chunk) /
           std::to_string(key.slice) / (std::to_string(key.generation) + ".ckpt");
}

SaveReceipt CheckpointStore::save(const CheckpointKey& key, const ModelState& state,
                                  std::vector<std::uint32_t> provenance) {
    state.arch.validate();
    if (state.params.size() != state.arch.param_count())
        throw InvalidArgument("state parameter count does not match its arch");
    if (key.role == Role::teacher && !provenance.empty())
        throw InvalidArgument("teacher checkpoints carry no label provenance");

    std::lock_guard lock(mutex_);
    auto& gens = records_[key.slot()];
    CheckpointRecord rec{key, state, std::move(provenance), 0};
    rec.key.generation = gens.empty() ? 1 : gens.rbegin()->first + 1;
    auto bytes = encode_checkpoint(rec);

    if (root_) {
        const auto path = path_of(rec.key);
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (ec || !out) throw IoError("cannot write checkpoint " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.close();
        if (!out) throw IoError("write failed for checkpoint " + path.string());
    }
    SaveReceipt receipt{rec.key, bytes.size()};
    gens.emplace(rec.key.generation, std::move(bytes));
    return receipt;
}

CheckpointRecord CheckpointStore::load(const CheckpointKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key.slot());
    auto describe = [&] {
        return to_string(key.role) + " checkpoint (" + std::to_string(key.constituent) + "," +
               std::to_string(key.chunk) + "," + std::to_string(key.slice) + ")";
    };
    if (it == records_.end() || it->second.empty()) throw NotFoundError(describe() + " not stored");
    const auto& gens = it->second;
    auto g = key.generation == 0 ? std::prev(gens.end()) : gens.find(key.generation);
    if (g == gens.end())
        throw NotFoundError(describe() + " generation " + std::to_string(key.generation) + " not stored");
    return decode_checkpoint(g->second);
}

bool CheckpointStore::contains(const CheckpointKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key.slot());
    if (it == records_.end() || it->second.empty()) return false;
    return key.generation == 0 || it->second.contains(key.generation);
}

std::uint32_t CheckpointStore::latest_generation(const CheckpointKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key.slot());
    if (it == records_.end() || it->second.empty()) return 0;
    return it->second.rbegin()->first;
}

std::vector<CheckpointKey> CheckpointStore::keys() const {
    std::lock_guard lock(mutex_);
    std::vector<CheckpointKey> out;
    for (const auto& [slot, gens] : records_)
        for (const auto& [gen, bytes] : gens)
            out.push_back({std::get<0>(slot), std::get<1>(slot), std::get<2>(slot), std::get<3>(slot), gen});
    return out;
}

StorageReport CheckpointStore::storage_report() const {
    std::lock_guard lock(mutex_);
    StorageReport report;
    for (const auto& [slot, gens] : records_) {
        auto& t = std::get<0>(slot) == Role::teacher ? report.teacher : report.student;
        if (!gens.empty()) ++t.latest_records;
        for (const auto& [gen, bytes] : gens) {
            ++t.records;
            t.bytes += bytes.size();
        }
    }
    return report;
}

std::size_t CheckpointStore::prune() {
    std::lock_guard lock(mutex_);
    std::size_t removed = 0;
    for (auto& [slot, gens] : records_) {
        while (gens.size() > 1) {
            auto oldest = gens.begin();
            if (root_) {
                CheckpointKey key{std::get<0>(slot), std::get<1>(slot), std::get<2>(slot), std::get<3>(slot),
                                  oldest->first};
                std::error_code ec;
                std::filesystem::remove(path_of(key), ec);
                if (ec) throw IoError("cannot remove " + path_of(key).string() + ": " + ec.message());
            }
            gens.erase(oldest);
            ++removed;
        }
    }
    return removed;
}

StorageReport storage_report(const CheckpointStore& store) { return store.storage_report(); }

}  // namespace purge
