#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "relcp/errors.hpp"

namespace relcp {

enum class SemanticType {
    Numerical,
    Categorical,
    MultiCategorical,
    Text,
    Timestamp,
    PrimaryKey,
    ForeignKey,
};

const char* semantic_type_name(SemanticType t);
SemanticType semantic_type_from_name(const std::string& name);

inline bool is_key_type(SemanticType t) {
    return t == SemanticType::PrimaryKey || t == SemanticType::ForeignKey;
}

enum class ValueTag {
    Null,
    Number,
    Category,
    MultiCategory,
    Text,
    Time,
    Key,
};

// Tagged cell value. MultiCategory tokens are kept sorted and deduplicated so
// equality and hashing are order-independent. Number equality is bitwise.
class Value {
   public:
    Value() : tag_(ValueTag::Null) {}

    static Value null() { return Value(); }

    static Value number(double x) {
        Value v;
        v.tag_ = ValueTag::Number;
        v.num_ = x;
        return v;
    }

    static Value category(std::string s) {
        Value v;
        v.tag_ = ValueTag::Category;
        v.str_ = std::move(s);
        return v;
    }

    static Value multi_category(std::vector<std::string> tokens) {
        Value v;
        v.tag_ = ValueTag::MultiCategory;
        std::sort(tokens.begin(), tokens.end());
        tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        v.tokens_ = std::move(tokens);
        return v;
    }

    static Value text(std::string s) {
        Value v;
        v.tag_ = ValueTag::Text;
        v.str_ = std::move(s);
        return v;
    }

    static Value time(int64_t epoch_seconds) {
        Value v;
        v.tag_ = ValueTag::Time;
        v.time_ = epoch_seconds;
        return v;
    }

    static Value key(std::string s) {
        if (s.empty()) throw ParseError("key values must be non-empty");
        Value v;
        v.tag_ = ValueTag::Key;
        v.str_ = std::move(s);
        return v;
    }

    ValueTag tag() const { return tag_; }
    bool is_null() const { return tag_ == ValueTag::Null; }

    double as_number() const {
        require(ValueTag::Number);
        return num_;
    }
    const std::string& as_category() const {
        require(ValueTag::Category);
        return str_;
    }
    const std::vector<std::string>& as_multi_category() const {
        require(ValueTag::MultiCategory);
        return tokens_;
    }
    const std::string& as_text() const {
        require(ValueTag::Text);
        return str_;
    }
    int64_t as_time() const {
        require(ValueTag::Time);
        return time_;
    }
    const std::string& as_key() const {
        require(ValueTag::Key);
        return str_;
    }

    bool operator==(const Value& o) const {
        if (tag_ != o.tag_) return false;
        switch (tag_) {
            case ValueTag::Null:
                return true;
            case ValueTag::Number:
                return std::bit_cast<uint64_t>(num_) == std::bit_cast<uint64_t>(o.num_);
            case ValueTag::Time:
                return time_ == o.time_;
            case ValueTag::MultiCategory:
                return tokens_ == o.tokens_;
            default:
                return str_ == o.str_;
        }
    }
    bool operator!=(const Value& o) const { return !(*this == o); }

    // Tag a raw value belongs to for a given column type.
    static ValueTag tag_for(SemanticType t) {
        switch (t) {
            case SemanticType::Numerical:
                return ValueTag::Number;
            case SemanticType::Categorical:
                return ValueTag::Category;
            case SemanticType::MultiCategorical:
                return ValueTag::MultiCategory;
            case SemanticType::Text:
                return ValueTag::Text;
            case SemanticType::Timestamp:
                return ValueTag::Time;
            default:
                return ValueTag::Key;
        }
    }

    bool matches(SemanticType t) const { return is_null() || tag_ == tag_for(t); }

   private:
    void require(ValueTag t) const {
        if (tag_ != t) throw TypeMismatch("value accessed with wrong tag");
    }

    ValueTag tag_;
    double num_ = 0.0;
    int64_t time_ = 0;
    std::string str_;
    std::vector<std::string> tokens_;
};

}  // namespace relcp
