#pragma once

#include <stdexcept>
#include <string>

namespace cpnet {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public Error {
public:
    using Error::Error;
};

class FileNotFound : public IoError {
public:
    explicit FileNotFound(const std::string& path) : IoError("file not found: " + path) {}
};

class ParseError : public IoError {
public:
    ParseError(const std::string& path, int line, const std::string& what)
        : IoError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class EmptyCloud : public Error {
public:
    explicit EmptyCloud(const std::string& msg = "point cloud is empty") : Error(msg) {}
};

class InvalidSpec : public Error {
public:
    using Error::Error;
};

class TooFewPoints : public Error {
public:
    using Error::Error;
};

class BadK : public Error {
public:
    using Error::Error;
};

class BadM : public Error {
public:
    using Error::Error;
};

class BadCount : public Error {
public:
    using Error::Error;
};

class EmptyResult : public Error {
public:
    using Error::Error;
};

class EmptySource : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class SizeMismatch : public Error {
public:
    using Error::Error;
};

class VariantMismatch : public Error {
public:
    using Error::Error;
};

class ZeroVector : public Error {
public:
    using Error::Error;
};

class NonFinite : public Error {
public:
    using Error::Error;
};

class NonScalarLoss : public Error {
public:
    using Error::Error;
};

class Misaligned : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(long step, const std::string& what)
        : Error("non-finite loss at step " + std::to_string(step) + ": " + what), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

class VersionMismatch : public Error {
public:
    using Error::Error;
};

class DegenerateLabels : public Error {
public:
    using Error::Error;
};

}  // namespace cpnet
