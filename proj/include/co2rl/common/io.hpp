#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace co2rl {

// Binary little-endian stream helpers shared by the dataset container and
// the parameter checkpoint format. Host is assumed little-endian (checked at
// runtime on first use).
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);
    ~BinaryWriter();
    BinaryWriter(const BinaryWriter&) = delete;
    BinaryWriter& operator=(const BinaryWriter&) = delete;

    void bytes(const void* data, std::size_t len);
    void u16(std::uint16_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void f32_array(const float* data, std::size_t n);
    void f64_array(const double* data, std::size_t n);
    void close();

private:
    std::FILE* f_ = nullptr;
    std::string path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);
    ~BinaryReader();
    BinaryReader(const BinaryReader&) = delete;
    BinaryReader& operator=(const BinaryReader&) = delete;

    void bytes(void* out, std::size_t len);
    std::uint16_t u16();
    std::uint64_t u64();
    float f32();
    double f64();
    void f32_array(float* out, std::size_t n);
    void f64_array(double* out, std::size_t n);
    bool at_eof();

private:
    std::FILE* f_ = nullptr;
    std::string path_;
};

// Exports a field as a 16-bit binary portable graymap (P5, maxval 65535,
// big-endian samples) scaled to the field's min/max; the scale is recorded in
// a sidecar text file "<path>.scale" so values can be recovered.
void write_pgm16(const std::string& path, const Eigen::ArrayXXd& field);

// Row-major CSV, one value per cell, one grid row per line.
void write_field_csv(const std::string& path, const Eigen::ArrayXXd& field);

// Generic CSV writer: header row then data rows.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace co2rl
