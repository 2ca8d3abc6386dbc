//! Scoped control of denormal arithmetic on the current thread.

/// While alive, subnormal inputs and results are treated as zero on this
/// thread. Dropping restores the previous floating-point control state.
///
/// Training gradients decay into the subnormal range once most samples are
/// fit, and denormal arithmetic is far slower on common CPUs. A no-op on
/// architectures without a supported control register.
pub struct FlushDenormals {
    #[cfg_attr(not(any(target_arch = "x86_64", target_arch = "aarch64")), allow(dead_code))]
    saved: u64,
}

impl FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    pub fn new() -> Self {
        // MXCSR bit 15 flushes results to zero, bit 6 treats inputs as zero.
        const FTZ_DAZ: u32 = (1 << 15) | (1 << 6);
        let mut csr: u32 = 0;
        // SAFETY: stmxcsr/ldmxcsr only read and write the SSE control register.
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut csr, options(nostack));
            let set = csr | FTZ_DAZ;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &set, options(nostack, readonly));
        }
        FlushDenormals { saved: u64::from(csr) }
    }

    #[cfg(target_arch = "aarch64")]
    pub fn new() -> Self {
        // FPCR bit 24 flushes denormals to zero.
        let fpcr: u64;
        // SAFETY: reads and writes only the floating-point control register.
        unsafe {
            std::arch::asm!("mrs {}, fpcr", out(reg) fpcr, options(nomem, nostack));
            std::arch::asm!("msr fpcr, {}", in(reg) fpcr | (1 << 24), options(nomem, nostack));
        }
        FlushDenormals { saved: fpcr }
    }

    #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
    pub fn new() -> Self {
        FlushDenormals { saved: 0 }
    }
}

impl Default for FlushDenormals {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        {
            let csr = self.saved as u32;
            // SAFETY: restores the value read in `new`.
            unsafe { std::arch::asm!("ldmxcsr [{}]", in(reg) &csr, options(nostack, readonly)) };
        }
        #[cfg(target_arch = "aarch64")]
        // SAFETY: restores the value read in `new`.
        unsafe {
            std::arch::asm!("msr fpcr, {}", in(reg) self.saved, options(nomem, nostack))
        };
    }
}
