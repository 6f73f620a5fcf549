#include <fstream>

#include "test_util.hpp"

using namespace viq;
using viq::testing::TempDir;

TEST(TensorIo, TwoByThreeF32FileIs41Bytes) {
    TempDir dir;
    ImageTensor t(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
    write_tensor(dir / "t.viqt", t);
    EXPECT_EQ(std::filesystem::file_size(dir / "t.viqt"), 41u);
}

TEST(TensorIo, RealRoundTripIsBitIdentical) {
    TempDir dir;
    const auto t = viq::testing::random_f32_image(7, 5, 1);
    write_tensor(dir / "a.viqt", t);
    EXPECT_EQ(read_image(dir / "a.viqt"), t);
    const auto bytes = read_file_bytes(dir / "a.viqt");
    write_tensor(dir / "b.viqt", read_image(dir / "a.viqt"));
    EXPECT_EQ(read_file_bytes(dir / "b.viqt"), bytes);
}

TEST(TensorIo, ComplexRoundTrip) {
    ComplexSpectrum s(3, 4);
    RandomStream rng(2);
    for (auto& v : s.data()) v = {rng.normal(), rng.normal()};
    const auto q = decode_spectrum(encode_tensor(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(q.data()[i].real(), static_cast<double>(static_cast<float>(s.data()[i].real())));
        EXPECT_EQ(q.data()[i].imag(), static_cast<double>(static_cast<float>(s.data()[i].imag())));
    }
    EXPECT_EQ(decode_spectrum(encode_tensor(q)), q);
    EXPECT_EQ(encode_tensor(s).size(), 17u + 3 * 4 * 8);
}

TEST(TensorIo, F64ExtensionIsLossless) {
    const auto t = viq::testing::random_image(4, 4, 3);
    EXPECT_EQ(decode_image(encode_tensor(t, Dtype::F64Real)), t);
}

TEST(TensorIo, HeaderLayout) {
    const auto b = encode_tensor(ImageTensor(2, 3));
    ASSERT_GE(b.size(), 17u);
    EXPECT_TRUE(std::equal(kViqtMagic.begin(), kViqtMagic.end(), b.begin()));
    EXPECT_EQ(b[8], 1);
    EXPECT_EQ(b[9], 2);  // height, little endian
    EXPECT_EQ(b[10], 0);
    EXPECT_EQ(b[13], 3);  // width
}

TEST(TensorIo, DistinctParseErrors) {
    auto kind_of = [](const std::vector<std::uint8_t>& bytes) {
        try {
            decode_image(bytes);
        } catch (const ParseError& e) {
            return e.kind();
        }
        ADD_FAILURE() << "no parse error";
        return ParseError::Kind::Syntax;
    };
    auto good = encode_tensor(ImageTensor(2, 3, 1.0));

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(kind_of(bad_magic), ParseError::Kind::BadMagic);

    auto truncated = good;
    truncated.resize(good.size() - 1);
    EXPECT_EQ(kind_of(truncated), ParseError::Kind::Truncated);
    EXPECT_EQ(kind_of(std::vector<std::uint8_t>(good.begin(), good.begin() + 12)),
              ParseError::Kind::Truncated);

    auto bad_dtype = good;
    bad_dtype[8] = 9;
    EXPECT_EQ(kind_of(bad_dtype), ParseError::Kind::UnknownDtype);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_EQ(kind_of(trailing), ParseError::Kind::Syntax);
}

TEST(TensorIo, DecodeRejectsComplexAsImage) {
    EXPECT_THROW(decode_image(encode_tensor(ComplexSpectrum(2, 2))), ParseError);
}

TEST(TensorIo, MissingFileIsIoError) {
    EXPECT_THROW(read_image("/nonexistent/dir/x.viqt"), IoError);
}

TEST(TensorIo, AtomicWriteLeavesNoTempFiles) {
    TempDir dir;
    atomic_write_file(dir / "x.txt", std::string("hello"));
    atomic_write_file(dir / "x.txt", std::string("world"));
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++n;
    EXPECT_EQ(n, 1u);
    const auto bytes = read_file_bytes(dir / "x.txt");
    EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "world");
}

TEST(TensorIo, PgmExport) {
    TempDir dir;
    ImageTensor t(2, 2, std::vector<double>{0, 1, 2, 3});
    export_pgm(dir / "x.pgm", t);
    const auto b = read_file_bytes(dir / "x.pgm");
    const std::string s(b.begin(), b.end());
    EXPECT_EQ(s.rfind("P5", 0), 0u);
    EXPECT_EQ(static_cast<unsigned char>(b.back()), 255);
}
