#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "serfiq/dataset.hpp"
#include "serfiq/rng.hpp"

using namespace serfiq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("serfiq_test_" + std::to_string(Catch::rngSeed()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

EmbeddingDataset random_dataset(std::uint64_t seed, std::size_t n_ids,
                                std::size_t per_id, std::size_t dim) {
    Rng rng(seed);
    EmbeddingDataset ds(dim);
    for (std::size_t i = 0; i < n_ids; ++i) {
        for (std::size_t j = 0; j < per_id; ++j) {
            EmbeddingRecord rec;
            rec.identity = "p" + std::to_string(i);
            rec.image_id = rec.identity + "_" + std::to_string(j);
            rec.vector.resize(dim);
            for (auto& v : rec.vector) v = static_cast<float>(rng.gaussian());
            ds.add(std::move(rec));
        }
    }
    return ds;
}

}  // namespace

TEST_CASE("csv loader builds the dataset in file order") {
    TempDir tmp;
    const auto path = tmp.file("two.csv");
    write_text(path, "image_id,identity,v0,v1\na,id1,1,0\nb,id1,0,1\n");

    const EmbeddingDataset ds = load_embeddings(path, EmbeddingFormat::csv);
    REQUIRE(ds.size() == 2);
    CHECK(ds.dim() == 2);
    CHECK(ds.identity_count() == 1);
    CHECK(ds[0].image_id == "a");
    CHECK(ds[0].vector == std::vector<float>{1.0f, 0.0f});
    CHECK(ds[1].image_id == "b");
    CHECK(ds[1].vector == std::vector<float>{0.0f, 1.0f});
}

TEST_CASE("csv row with wrong width names the offending row") {
    TempDir tmp;
    const auto path = tmp.file("bad.csv");
    write_text(path, "image_id,identity,v0,v1\na,id1,1,0\nb,id1,1,0,5\n");
    CHECK_THROWS_WITH(load_embeddings(path, EmbeddingFormat::csv),
                      Catch::Matchers::ContainsSubstring("row 2") &&
                          Catch::Matchers::ContainsSubstring("dimension mismatch"));
}

TEST_CASE("csv errors: duplicates, non-finite values, malformed header") {
    TempDir tmp;
    const auto dup = tmp.file("dup.csv");
    write_text(dup, "image_id,identity,v0\na,id1,1\na,id2,2\n");
    CHECK_THROWS_WITH(load_embeddings(dup, EmbeddingFormat::csv),
                      Catch::Matchers::ContainsSubstring("duplicate image_id"));

    const auto nan = tmp.file("nan.csv");
    write_text(nan, "image_id,identity,v0\na,id1,nan\n");
    CHECK_THROWS_WITH(load_embeddings(nan, EmbeddingFormat::csv),
                      Catch::Matchers::ContainsSubstring("non-finite"));

    const auto hdr = tmp.file("hdr.csv");
    write_text(hdr, "id,identity,v0\na,id1,1\n");
    CHECK_THROWS_WITH(load_embeddings(hdr, EmbeddingFormat::csv),
                      Catch::Matchers::ContainsSubstring("header"));

    CHECK_THROWS(load_embeddings(tmp.file("missing.csv"), EmbeddingFormat::csv));
}

TEST_CASE("emb1 round-trip is the identity") {
    TempDir tmp;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const EmbeddingDataset ds = random_dataset(seed, 3, 4, 7);
        const auto path = tmp.file("ds_" + std::to_string(seed) + ".emb1");
        save_embeddings(ds, path, EmbeddingFormat::emb1);
        CHECK(load_embeddings(path, EmbeddingFormat::emb1) == ds);
    }
}

TEST_CASE("csv round-trip is value-exact") {
    TempDir tmp;
    const EmbeddingDataset ds = random_dataset(11, 2, 3, 5);
    const auto path = tmp.file("ds.csv");
    save_embeddings(ds, path, EmbeddingFormat::csv);
    CHECK(load_embeddings(path, EmbeddingFormat::csv) == ds);
}

TEST_CASE("csv and emb1 agree on the same data") {
    TempDir tmp;
    const EmbeddingDataset ds = random_dataset(23, 2, 2, 3);
    save_embeddings(ds, tmp.file("a.csv"), EmbeddingFormat::csv);
    save_embeddings(ds, tmp.file("a.emb1"), EmbeddingFormat::emb1);
    CHECK(load_embeddings(tmp.file("a.csv"), EmbeddingFormat::csv) ==
          load_embeddings(tmp.file("a.emb1"), EmbeddingFormat::emb1));
}

TEST_CASE("empty dataset keeps its declared dim through emb1") {
    TempDir tmp;
    const EmbeddingDataset empty(12);
    const auto path = tmp.file("empty.emb1");
    save_embeddings(empty, path, EmbeddingFormat::emb1);
    const EmbeddingDataset back = load_embeddings(path, EmbeddingFormat::emb1);
    CHECK(back.size() == 0);
    CHECK(back.dim() == 12);
}

TEST_CASE("single record with dim 512 round-trips") {
    TempDir tmp;
    const EmbeddingDataset ds = random_dataset(42, 1, 1, 512);
    const auto path = tmp.file("one.emb1");
    save_embeddings(ds, path, EmbeddingFormat::emb1);
    CHECK(load_embeddings(path, EmbeddingFormat::emb1) == ds);
}

TEST_CASE("generate_pairs covers intra-identity pairs and samples impostors") {
    const EmbeddingDataset ds = random_dataset(7, 2, 2, 4);

    SECTION("2 identities x 2 images") {
        const PairProtocol proto = generate_pairs(ds, 10, 99);
        CHECK(proto.genuine.size() == 2);
        CHECK(proto.impostor.size() == 4);  // capped at all cross pairs
    }

    SECTION("impostor_count 0 gives a genuine-only protocol") {
        const PairProtocol proto = generate_pairs(ds, 0, 99);
        CHECK(proto.genuine.size() == 2);
        CHECK(proto.impostor.empty());
    }

    SECTION("pairs are canonicalized and duplicate-free") {
        const PairProtocol proto = generate_pairs(ds, 4, 5);
        std::set<IdPair> all;
        for (const auto& p : proto.genuine) {
            CHECK(p.first < p.second);
            all.insert(p);
        }
        for (const auto& p : proto.impostor) {
            CHECK(p.first < p.second);
            all.insert(p);
        }
        CHECK(all.size() == proto.genuine.size() + proto.impostor.size());
    }
}

TEST_CASE("generate_pairs is deterministic and counts follow combinatorics") {
    const EmbeddingDataset ds = random_dataset(13, 3, 3, 4);

    const PairProtocol a = generate_pairs(ds, 10, 2024);
    const PairProtocol b = generate_pairs(ds, 10, 2024);
    CHECK(a.genuine == b.genuine);
    CHECK(a.impostor == b.impostor);
    CHECK(a.impostor.size() == 10);

    // sum over identities of n_i*(n_i-1)/2
    std::size_t expected_genuine = 0;
    for (const auto& [identity, positions] : ds.identity_index())
        expected_genuine += positions.size() * (positions.size() - 1) / 2;
    CHECK(a.genuine.size() == expected_genuine);

    const PairProtocol c = generate_pairs(ds, 10, 2025);
    CHECK(a.impostor != c.impostor);  // different seed, different sample
}

TEST_CASE("generate_pairs rejects degenerate inputs") {
    const EmbeddingDataset single = random_dataset(5, 1, 3, 4);
    CHECK_THROWS_WITH(generate_pairs(single, 1, 0),
                      Catch::Matchers::ContainsSubstring("2 identities"));
    CHECK_NOTHROW(generate_pairs(single, 0, 0));

    const EmbeddingDataset one = random_dataset(5, 1, 1, 4);
    CHECK_THROWS(generate_pairs(one, 0, 0));
}

TEST_CASE("quality table load enforces uniqueness and finiteness") {
    TempDir tmp;
    const auto good = tmp.file("q.csv");
    write_text(good, "image_id,quality\na,0.9\nb,0.1\n");
    const QualityTable table = load_quality_table(good);
    REQUIRE(table.entries.size() == 2);
    CHECK(table.at("a") == 0.9);
    CHECK(table.at("b") == 0.1);

    const auto dup = tmp.file("dup.csv");
    write_text(dup, "image_id,quality\na,0.9\na,0.2\n");
    CHECK_THROWS_WITH(load_quality_table(dup),
                      Catch::Matchers::ContainsSubstring("duplicate"));

    const auto nan = tmp.file("nan.csv");
    write_text(nan, "image_id,quality\na,nan\n");
    CHECK_THROWS_WITH(load_quality_table(nan),
                      Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("quality table round-trips at full precision") {
    TempDir tmp;
    QualityTable table;
    table.entries = {{"a", 0.1234567890123456789}, {"b", 1.0}, {"c", -3.5e-7}};
    const auto path = tmp.file("q.csv");
    save_quality_table(table, path);
    const QualityTable back = load_quality_table(path);
    REQUIRE(back.entries.size() == table.entries.size());
    for (const auto& [id, q] : table.entries) CHECK(back.at(id) == q);
}

TEST_CASE("pair protocol file round-trips") {
    TempDir tmp;
    const EmbeddingDataset ds = random_dataset(31, 3, 2, 4);
    const PairProtocol proto = generate_pairs(ds, 5, 77);
    const auto path = tmp.file("pairs.csv");
    save_pairs(proto, path);
    const PairProtocol back = load_pairs(path);
    CHECK(back.genuine == proto.genuine);
    CHECK(back.impostor == proto.impostor);
}
