#pragma once

// Identity-labelled embedding storage and the file formats around it.
//
// Formats:
//   embeddings CSV : header `image_id,identity,v0,...,v{D-1}`, one record/row
//   emb1 binary    : magic "EMB1", u32-LE dim, u64-LE count, then per record
//                    u16-LE id length + bytes, u16-LE identity length + bytes,
//                    dim * f32-LE
//   quality CSV    : header `image_id,quality`
//
// Vector components are stored as float (what real embedding stacks emit);
// all downstream math upcasts to double.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "serfiq/rng.hpp"

namespace serfiq {

struct EmbeddingRecord {
    std::string image_id;
    std::string identity;
    std::vector<float> vector;
};

class EmbeddingDataset {
public:
    EmbeddingDataset() = default;
    explicit EmbeddingDataset(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::vector<EmbeddingRecord>& records() const { return records_; }
    const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }

    // identity -> positions of its records, in insertion order
    const std::map<std::string, std::vector<std::size_t>>& identity_index() const {
        return identity_index_;
    }

    std::size_t identity_count() const { return identity_index_.size(); }

    bool contains(const std::string& image_id) const {
        return id_index_.count(image_id) != 0;
    }

    const EmbeddingRecord& by_id(const std::string& image_id) const {
        auto it = id_index_.find(image_id);
        if (it == id_index_.end())
            throw std::runtime_error("unknown image_id: " + image_id);
        return records_[it->second];
    }

    void add(EmbeddingRecord rec) {
        if (rec.image_id.empty()) throw std::runtime_error("empty image_id");
        if (rec.identity.empty())
            throw std::runtime_error("empty identity for image_id " + rec.image_id);
        if (rec.vector.size() != dim_)
            throw std::runtime_error("dimension mismatch for image_id " + rec.image_id +
                                     ": got " + std::to_string(rec.vector.size()) +
                                     ", expected " + std::to_string(dim_));
        for (float v : rec.vector)
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite value in image_id " + rec.image_id);
        if (!id_index_.emplace(rec.image_id, records_.size()).second)
            throw std::runtime_error("duplicate image_id: " + rec.image_id);
        identity_index_[rec.identity].push_back(records_.size());
        records_.push_back(std::move(rec));
    }

    bool operator==(const EmbeddingDataset& other) const {
        if (dim_ != other.dim_ || records_.size() != other.records_.size()) return false;
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto& a = records_[i];
            const auto& b = other.records_[i];
            if (a.image_id != b.image_id || a.identity != b.identity ||
                a.vector != b.vector)
                return false;
        }
        return true;
    }

private:
    std::size_t dim_ = 0;
    std::vector<EmbeddingRecord> records_;
    std::unordered_map<std::string, std::size_t> id_index_;
    std::map<std::string, std::vector<std::size_t>> identity_index_;
};

// Unordered image pair, canonicalized so first < second lexicographically.
using IdPair = std::pair<std::string, std::string>;

inline IdPair make_pair_canonical(std::string a, std::string b) {
    if (a == b) throw std::runtime_error("pair of an image with itself: " + a);
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b)};
}

struct PairProtocol {
    std::vector<IdPair> genuine;   // equal identities
    std::vector<IdPair> impostor;  // differing identities
};

struct QualityTable {
    std::map<std::string, double> entries;

    double at(const std::string& image_id) const {
        auto it = entries.find(image_id);
        if (it == entries.end())
            throw std::runtime_error("no quality for image_id: " + image_id);
        return it->second;
    }
};

enum class EmbeddingFormat { csv, emb1 };

namespace detail {

inline void split_csv_line(const std::string& line, std::vector<std::string>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

template <typename T>
inline T parse_number(const std::string& field, std::size_t row, std::size_t col) {
    T value{};
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw std::runtime_error("row " + std::to_string(row) + ", column " +
                                 std::to_string(col) + ": cannot parse number '" +
                                 field + "'");
    return value;
}

inline std::string read_line_strip_cr(std::istream& in, bool& ok) {
    std::string line;
    ok = static_cast<bool>(std::getline(in, line));
    if (ok && !line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

inline void write_u16le(std::ostream& out, std::uint16_t v) {
    const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    out.write(bytes, 2);
}

inline void write_u32le(std::ostream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 4);
}

inline void write_u64le(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}

inline void write_f32le(std::ostream& out, float f) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, 4);
    write_u32le(out, bits);
}

inline std::uint16_t read_u16le(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw std::runtime_error("unexpected end of emb1 file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("unexpected end of emb1 file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint64_t read_u64le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("unexpected end of emb1 file");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline float read_f32le(std::istream& in) {
    const std::uint32_t bits = read_u32le(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline std::string read_string16(std::istream& in) {
    const std::uint16_t len = read_u16le(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw std::runtime_error("unexpected end of emb1 file");
    return s;
}

// Shortest decimal that round-trips a float exactly.
inline std::string format_float(float v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

inline EmbeddingDataset load_embeddings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    bool ok = false;
    const std::string header = detail::read_line_strip_cr(in, ok);
    if (!ok) throw std::runtime_error(path + ": empty file, expected header");

    std::vector<std::string> fields;
    detail::split_csv_line(header, fields);
    if (fields.size() < 2 || fields[0] != "image_id" || fields[1] != "identity")
        throw std::runtime_error(path + ": malformed header, expected "
                                 "'image_id,identity,v0,...'");
    const std::size_t dim = fields.size() - 2;
    for (std::size_t i = 0; i < dim; ++i)
        if (fields[2 + i] != "v" + std::to_string(i))
            throw std::runtime_error(path + ": malformed header, column " +
                                     std::to_string(3 + i) + " should be v" +
                                     std::to_string(i));

    EmbeddingDataset ds(dim);
    std::size_t row = 0;
    while (true) {
        const std::string line = detail::read_line_strip_cr(in, ok);
        if (!ok) break;
        if (line.empty()) continue;
        ++row;
        detail::split_csv_line(line, fields);
        if (fields.size() != dim + 2)
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": dimension mismatch, got " +
                                     std::to_string(fields.size() - 2) +
                                     " values, expected " + std::to_string(dim));
        EmbeddingRecord rec;
        rec.image_id = fields[0];
        rec.identity = fields[1];
        rec.vector.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            rec.vector[i] = detail::parse_number<float>(fields[2 + i], row, 3 + i);
            if (!std::isfinite(rec.vector[i]))
                throw std::runtime_error(path + ": row " + std::to_string(row) +
                                         ": non-finite value in column " +
                                         std::to_string(3 + i));
        }
        try {
            ds.add(std::move(rec));
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(path + ": row " + std::to_string(row) + ": " +
                                     e.what());
        }
    }
    return ds;
}

inline EmbeddingDataset load_embeddings_emb1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::string_view(magic, 4) != "EMB1")
        throw std::runtime_error(path + ": bad magic, not an emb1 file");

    const std::uint32_t dim = detail::read_u32le(in);
    const std::uint64_t count = detail::read_u64le(in);
    EmbeddingDataset ds(dim);
    for (std::uint64_t r = 0; r < count; ++r) {
        EmbeddingRecord rec;
        rec.image_id = detail::read_string16(in);
        rec.identity = detail::read_string16(in);
        rec.vector.resize(dim);
        for (std::uint32_t i = 0; i < dim; ++i) {
            rec.vector[i] = detail::read_f32le(in);
            if (!std::isfinite(rec.vector[i]))
                throw std::runtime_error(path + ": record " + std::to_string(r + 1) +
                                         ": non-finite value at offset " +
                                         std::to_string(i));
        }
        try {
            ds.add(std::move(rec));
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(path + ": record " + std::to_string(r + 1) +
                                     ": " + e.what());
        }
    }
    return ds;
}

inline EmbeddingDataset load_embeddings(const std::string& path, EmbeddingFormat fmt) {
    return fmt == EmbeddingFormat::csv ? load_embeddings_csv(path)
                                       : load_embeddings_emb1(path);
}

inline void save_embeddings_csv(const EmbeddingDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "image_id,identity";
    for (std::size_t i = 0; i < ds.dim(); ++i) out << ",v" << i;
    out << "\n";
    for (const auto& rec : ds.records()) {
        out << rec.image_id << ',' << rec.identity;
        for (float v : rec.vector) out << ',' << detail::format_float(v);
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void save_embeddings_emb1(const EmbeddingDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write("EMB1", 4);
    detail::write_u32le(out, static_cast<std::uint32_t>(ds.dim()));
    detail::write_u64le(out, ds.size());
    for (const auto& rec : ds.records()) {
        if (rec.image_id.size() > 0xFFFF || rec.identity.size() > 0xFFFF)
            throw std::runtime_error("id string too long for emb1: " + rec.image_id);
        detail::write_u16le(out, static_cast<std::uint16_t>(rec.image_id.size()));
        out.write(rec.image_id.data(), static_cast<std::streamsize>(rec.image_id.size()));
        detail::write_u16le(out, static_cast<std::uint16_t>(rec.identity.size()));
        out.write(rec.identity.data(), static_cast<std::streamsize>(rec.identity.size()));
        for (float v : rec.vector) detail::write_f32le(out, v);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void save_embeddings(const EmbeddingDataset& ds, const std::string& path,
                            EmbeddingFormat fmt) {
    if (fmt == EmbeddingFormat::csv)
        save_embeddings_csv(ds, path);
    else
        save_embeddings_emb1(ds, path);
}

// All intra-identity pairs plus `impostor_count` cross-identity pairs sampled
// uniformly without replacement (capped at the number available). Both lists
// come out canonicalized and sorted, so equal inputs give equal protocols.
inline PairProtocol generate_pairs(const EmbeddingDataset& ds,
                                   std::size_t impostor_count, std::uint64_t seed) {
    if (ds.size() < 2)
        throw std::runtime_error("generate_pairs: need at least 2 records");
    if (impostor_count > 0 && ds.identity_count() < 2)
        throw std::runtime_error(
            "generate_pairs: impostor pairs need at least 2 identities");

    PairProtocol proto;
    for (const auto& [identity, positions] : ds.identity_index()) {
        for (std::size_t i = 0; i < positions.size(); ++i)
            for (std::size_t j = i + 1; j < positions.size(); ++j)
                proto.genuine.push_back(make_pair_canonical(
                    ds[positions[i]].image_id, ds[positions[j]].image_id));
    }
    std::sort(proto.genuine.begin(), proto.genuine.end());

    if (impostor_count > 0) {
        std::vector<IdPair> cross;
        const auto& recs = ds.records();
        for (std::size_t i = 0; i < recs.size(); ++i)
            for (std::size_t j = i + 1; j < recs.size(); ++j)
                if (recs[i].identity != recs[j].identity)
                    cross.push_back(
                        make_pair_canonical(recs[i].image_id, recs[j].image_id));
        Rng rng(derive_seed(seed, 0x70616972 /* "pair" */));
        rng.shuffle(cross);
        if (cross.size() > impostor_count) cross.resize(impostor_count);
        std::sort(cross.begin(), cross.end());
        proto.impostor = std::move(cross);
    }
    return proto;
}

inline QualityTable load_quality_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    bool ok = false;
    const std::string header = detail::read_line_strip_cr(in, ok);
    if (!ok || header != "image_id,quality")
        throw std::runtime_error(path + ": malformed header, expected "
                                 "'image_id,quality'");

    QualityTable table;
    std::vector<std::string> fields;
    std::size_t row = 0;
    while (true) {
        const std::string line = detail::read_line_strip_cr(in, ok);
        if (!ok) break;
        if (line.empty()) continue;
        ++row;
        detail::split_csv_line(line, fields);
        if (fields.size() != 2)
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": expected 2 columns, got " +
                                     std::to_string(fields.size()));
        const double q = detail::parse_number<double>(fields[1], row, 2);
        if (!std::isfinite(q))
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": non-finite quality for " + fields[0]);
        if (!table.entries.emplace(fields[0], q).second)
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": duplicate image_id: " + fields[0]);
    }
    return table;
}

inline void save_quality_table(const QualityTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "image_id,quality\n";
    for (const auto& [id, q] : table.entries)
        out << id << ',' << detail::format_double(q) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Pairs CSV: header `image_id_a,image_id_b,label`, label genuine|impostor.
inline void save_pairs(const PairProtocol& proto, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "image_id_a,image_id_b,label\n";
    for (const auto& [a, b] : proto.genuine) out << a << ',' << b << ",genuine\n";
    for (const auto& [a, b] : proto.impostor) out << a << ',' << b << ",impostor\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline PairProtocol load_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    bool ok = false;
    const std::string header = detail::read_line_strip_cr(in, ok);
    if (!ok || header != "image_id_a,image_id_b,label")
        throw std::runtime_error(path + ": malformed header, expected "
                                 "'image_id_a,image_id_b,label'");
    PairProtocol proto;
    std::set<IdPair> seen;
    std::vector<std::string> fields;
    std::size_t row = 0;
    while (true) {
        const std::string line = detail::read_line_strip_cr(in, ok);
        if (!ok) break;
        if (line.empty()) continue;
        ++row;
        detail::split_csv_line(line, fields);
        if (fields.size() != 3)
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": expected 3 columns");
        IdPair p = make_pair_canonical(fields[0], fields[1]);
        if (!seen.insert(p).second)
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": duplicate pair " + p.first + "," + p.second);
        if (fields[2] == "genuine")
            proto.genuine.push_back(std::move(p));
        else if (fields[2] == "impostor")
            proto.impostor.push_back(std::move(p));
        else
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": label must be genuine or impostor");
    }
    return proto;
}

}  // namespace serfiq
