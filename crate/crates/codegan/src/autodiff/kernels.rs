//! Raw f32 matrix kernels shared by the forward and backward passes.

/// out[m,n] += a[m,k] * b[k,n]
pub fn gemm_nn_acc(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
}

/// out[m,k] += g[m,n] * b[k,n]^T   (i.e. g * transpose(b))
pub fn gemm_nt_acc(out: &mut [f32], g: &[f32], b: &[f32], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0f32;
            for j in 0..n {
                acc += grow[j] * brow[j];
            }
            orow[p] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * g[m,n]   (i.e. transpose(a) * g)
pub fn gemm_tn_acc(out: &mut [f32], a: &[f32], g: &[f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for p in 0..k {
            let apv = arow[p];
            if apv == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += apv * grow[j];
            }
        }
    }
}
