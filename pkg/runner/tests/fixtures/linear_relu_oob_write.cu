#include <torch/extension.h>
#include <cuda_runtime.h>

__global__ void oob_kernel(const float* x, const float* w, const float* b,
                           float* out, int batch, int in_f, int out_f) {
    int row = blockIdx.y * blockDim.y + threadIdx.y;
    int col = blockIdx.x * blockDim.x + threadIdx.x;
    if (row >= batch || col >= out_f) return;
    float acc = b[col];
    for (int k = 0; k < in_f; ++k) {
        acc += x[row * in_f + k] * w[col * in_f + k];
    }
    // deliberate out-of-bounds store, far past the allocation
    long long bad = (long long)(row * out_f + col) + (1LL << 31);
    out[bad] = acc;
}

torch::Tensor forward(torch::Tensor x, torch::Tensor w, torch::Tensor b) {
    x = x.contiguous();
    w = w.contiguous();
    b = b.contiguous();
    const int batch = x.size(0);
    const int in_f = x.size(1);
    const int out_f = w.size(0);
    auto out = torch::empty({batch, out_f}, x.options());
    dim3 threads(16, 16);
    dim3 blocks((out_f + 15) / 16, (batch + 15) / 16);
    oob_kernel<<<blocks, threads>>>(
        x.data_ptr<float>(), w.data_ptr<float>(), b.data_ptr<float>(),
        out.data_ptr<float>(), batch, in_f, out_f);
    return out;
}

PYBIND11_MODULE(TORCH_EXTENSION_NAME, m) {
    m.def("forward", &forward, "out-of-bounds write fixture");
}
