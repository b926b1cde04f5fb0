#include "helpers.hpp"

#include <nnslicer/dataset.hpp>

#include <json.hpp>

using namespace nnslicer;
using namespace testing_support;

namespace {

// Builds an NNSM file byte by byte from a JSON header and blob floats.
std::vector<std::uint8_t> handwritten(const nlohmann::json& header, const std::vector<float>& blob) {
  std::vector<std::uint8_t> out{'N', 'N', 'S', 'M', 1};
  std::string text = header.dump();
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  while (out.size() % 8) out.push_back(0);
  for (float f : blob) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

nlohmann::json tensor_ref(std::vector<std::size_t> shape, std::size_t offset) {
  return {{"shape", shape}, {"offset", offset}};
}

ModelGraph with_scale(float sigma) {
  GraphBuilder b({2, 3, 3}, 2);
  b.scale(ScaleParams{Tensor({2}, {0, 0}), Tensor({2}, {1, sigma}), Tensor({2}, {1, 1}), Tensor({2}, {0, 0})});
  b.unary(LayerKind::Flatten);
  b.fc(2, Tensor({2, 18}), Tensor({2}));
  return b.finish();
}

}  // namespace

TEST(Model, LenetValidates) { EXPECT_TRUE(validate(lenet(1)).empty()); }

TEST(Model, AddReferencingLaterLayerIsACycle) {
  GraphBuilder b({1, 4, 4}, 2);
  b.unary(LayerKind::ReLU);
  b.add({1, 3});
  b.unary(LayerKind::ReLU);
  b.unary(LayerKind::Flatten);
  b.fc(2, Tensor({2, 16}), Tensor({2}));
  auto m = b.finish();
  auto v = validate(m);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v[0].layer, std::optional<std::size_t>(2));
}

TEST(Model, FullyConnectedShapeMismatch) {
  GraphBuilder b({120}, 10);
  b.fc(10, Tensor({10, 84}), Tensor({10}));
  auto v = validate(b.finish());
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v[0].layer, std::optional<std::size_t>(1));
  EXPECT_THROW(require_valid(b.graph()), ValidationError);
}

TEST(Model, NeuronAndSynapseCounts) {
  GraphBuilder b({16, 8, 8}, 10);
  b.conv(32, Tensor({32, 16, 3, 3}), Tensor({32}), Window{3, 3, 1, 1, 1, 1});
  b.unary(LayerKind::ReLU);
  b.unary(LayerKind::Flatten);
  b.fc(20, Tensor({20, 32 * 64}), Tensor({20}));
  b.fc(10, Tensor({10, 20}), Tensor({10}));
  auto m = b.finish();
  ModelIndex idx(m);
  EXPECT_EQ(idx.neuron_count(1), 32u);
  EXPECT_EQ(idx.synapse_count(1), 4608u);
  EXPECT_EQ(idx.neuron_count(2), 32u);
  EXPECT_EQ(idx.synapse_count(2), 0u);
  EXPECT_EQ(idx.neuron_count(5), 10u);
  EXPECT_EQ(idx.synapse_count(5), 200u);
  auto syn = enumerate_synapses(m);
  ASSERT_EQ(syn.size(), idx.synapse_count());
  for (std::size_t i = 0; i < syn.size(); i += 97) {
    EXPECT_EQ(idx.flat(syn[i]), i);
    EXPECT_EQ(idx.synapse_at(i), syn[i]);
  }
  auto neu = enumerate_neurons(m);
  ASSERT_EQ(neu.size(), idx.neuron_count());
  for (std::size_t i = 0; i < neu.size(); ++i) EXPECT_EQ(idx.flat(neu[i]), i);
}

TEST(ModelIo, RoundTripIsBitIdentical) {
  for (std::uint64_t s = 0; s < 12; ++s) {
    auto m = random_graph(s, {}, s);
    auto back = deserialize_model(serialize_model(m));
    EXPECT_EQ(back, m);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      if (m.layers[l].weights) EXPECT_TRUE(bit_identical(*back.layers[l].weights, *m.layers[l].weights));
    }
  }
  auto dir = temp_dir("model_io");
  auto m = lenet(3);
  save_model(m, dir / "a.nnsm");
  save_model(m, dir / "b.nnsm");
  EXPECT_EQ(load_model(dir / "a.nnsm"), m);
  EXPECT_EQ(sha256(read_file(dir / "a.nnsm")), sha256(read_file(dir / "b.nnsm")));
}

TEST(ModelIo, SavingInvalidGraphIsRefused) {
  auto m = with_scale(0.0f);
  EXPECT_THROW(serialize_model(m), ValidationError);
}

TEST(ModelIo, ZeroSigmaInFileNamesTheLayer) {
  auto bytes = serialize_model(with_scale(1.0f));
  // Patch the sigma tensor of layer 1 in the blob.
  auto hdr_len = static_cast<std::size_t>(bytes[5]) | static_cast<std::size_t>(bytes[6]) << 8;
  auto header = nlohmann::json::parse(bytes.begin() + 13, bytes.begin() + 13 + static_cast<std::ptrdiff_t>(hdr_len));
  std::size_t blob = (13 + hdr_len + 7) / 8 * 8;
  std::size_t off = header["layers"][1]["tensors"]["scale_std"]["offset"].get<std::size_t>();
  for (int i = 0; i < 4; ++i) bytes[blob + off + 4 + i] = 0;
  try {
    deserialize_model(bytes);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(ModelIo, HandwrittenMinimalModel) {
  nlohmann::json header{
      {"format", "NNSM"},
      {"input_shape", {3}},
      {"class_count", 2},
      {"blob_bytes", 32},
      {"layers",
       {{{"index", 0}, {"kind", "Input"}, {"inputs", nlohmann::json::array()}},
        {{"index", 1},
         {"kind", "FullyConnected"},
         {"inputs", {0}},
         {"units", 2},
         {"tensors", {{"weights", tensor_ref({2, 3}, 0)}, {"bias", tensor_ref({2}, 24)}}}},
        {{"index", 2}, {"kind", "Output"}, {"inputs", {1}}}}}};
  auto m = deserialize_model(handwritten(header, {1, 2, 3, 4, 5, 6, 0.5f, -0.5f}));
  ASSERT_EQ(m.layers.size(), 3u);
  EXPECT_EQ(m.layers[1].weights->shape(), (Shape{2, 3}));
  EXPECT_EQ((*m.layers[1].weights)[5], 6.0f);
  EXPECT_EQ((*m.layers[1].bias)[1], -0.5f);
  auto dims = infer_dims(m);
  EXPECT_EQ(dims[1], (Dims{2, 1, 1}));
  EXPECT_EQ(dims[2], (Dims{2, 1, 1}));
}

TEST(ModelIo, CorruptFilesAreRejected) {
  auto bytes = serialize_model(lenet(1));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = bytes;
  bad.resize(bytes.size() - 4);
  EXPECT_THROW(deserialize_model(bad), FormatError);
}

TEST(DatasetIo, RoundTrip) {
  auto m = lenet(1);
  auto d = random_inputs(m, 3, 9);
  EXPECT_EQ(deserialize_dataset(serialize_dataset(d), 10), d);
  auto dir = temp_dir("dataset_io");
  save_dataset(d, dir / "d.nnst");
  EXPECT_EQ(load_dataset(dir / "d.nnst", 10), d);
}

TEST(DatasetIo, LabelEqualToClassCountIsRejected) {
  Dataset d{{{vec({1, 2}), 2}}, 2};
  EXPECT_THROW(serialize_dataset(d), std::invalid_argument);
  d.class_count = 3;
  auto bytes = serialize_dataset(d);
  EXPECT_THROW(deserialize_dataset(bytes, 2), FormatError);
  EXPECT_EQ(deserialize_dataset(bytes).class_count, 3u);
}

TEST(DatasetIo, SyntheticDigitsHaveMnistShape) {
  auto d = digits::generate(50, 4);
  ASSERT_EQ(d.size(), 50u);
  for (const auto& s : d.samples) {
    EXPECT_EQ(s.input.shape(), (Shape{1, 28, 28}));
    for (float v : s.input.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_EQ(digits::generate(50, 4), d);
}
